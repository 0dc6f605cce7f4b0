#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "uidsc/ops.hpp"
#include "uidsc/tensor.hpp"

namespace uidsc::nn {

/// Named trainable parameters and non-trainable buffers (normalization
/// running statistics). Entries are `Var` handles, so layers holding copies
/// observe in-place updates from the optimizer and checkpoint loader.
class ParamStore {
public:
    Var add_param(const std::string& name, Tensor init);
    Var add_buffer(const std::string& name, Tensor init);

    bool contains(const std::string& name) const;
    Var& get(const std::string& name);
    const Var& get(const std::string& name) const;

    const std::map<std::string, Var>& params() const { return params_; }
    const std::map<std::string, Var>& buffers() const { return buffers_; }
    /// Parameters and buffers, sorted by name.
    std::map<std::string, Var> all() const;

    std::vector<Var> trainable() const;
    std::size_t parameter_count() const;
    void zero_grad();

private:
    std::map<std::string, Var> params_;
    std::map<std::string, Var> buffers_;
};

/// Per-forward settings shared by every layer.
struct Context {
    bool training = false;
    ops::NormMode norm = ops::NormMode::Batch;
};

using InitRng = std::mt19937_64;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
Tensor uniform_fan_in(Shape shape, int fan_in, InitRng& rng);

struct Conv2d {
    Var weight;
    Var bias;
    int stride = 1;
    int padding = 0;

    static Conv2d create(ParamStore& store, const std::string& name, int in_channels,
                         int out_channels, int kernel, int stride, InitRng& rng);
    Var operator()(const Var& x) const;
};

struct ConvTranspose2d {
    Var weight;
    Var bias;
    int stride = 1;
    int padding = 0;
    int output_padding = 0;

    /// Output spatial size is exactly `stride` times the input size.
    static ConvTranspose2d create(ParamStore& store, const std::string& name, int in_channels,
                                  int out_channels, int kernel, int stride, InitRng& rng);
    Var operator()(const Var& x) const;
};

struct BatchNorm2d {
    Var gamma;
    Var beta;
    Var running_mean;
    Var running_var;

    static BatchNorm2d create(ParamStore& store, const std::string& name, int channels);
    Var operator()(const Var& x, const Context& ctx) const;
};

struct PRelu {
    Var slope;

    static PRelu create(ParamStore& store, const std::string& name, int channels);
    Var operator()(const Var& x) const { return ops::prelu(x, slope); }
};

/// Convolution + normalization + activation (CBP block).
struct ConvBnPrelu {
    Conv2d conv;
    BatchNorm2d bn;
    PRelu act;

    static ConvBnPrelu create(ParamStore& store, const std::string& name, int in_channels,
                              int out_channels, int kernel, int stride, InitRng& rng);
    Var operator()(const Var& x, const Context& ctx) const;
};

/// Adam with optional global-norm gradient clipping, or plain SGD.
class Optimizer {
public:
    enum class Kind { Adam, Sgd };

    struct Options {
        Kind kind = Kind::Adam;
        double learning_rate = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double clip_norm = 0.0;  // <= 0 disables clipping
    };

    Optimizer(std::vector<Var> params, Options options);

    /// Applies one update from accumulated gradients; returns the pre-clip global norm.
    double step();
    void zero_grad();
    std::int64_t steps() const { return step_; }

private:
    std::vector<Var> params_;
    Options options_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::int64_t step_ = 0;
};

}  // namespace uidsc::nn

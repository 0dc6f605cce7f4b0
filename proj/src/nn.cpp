#include "uidsc/nn.hpp"

#include <cmath>

#include "uidsc/errors.hpp"

namespace uidsc::nn {

Var ParamStore::add_param(const std::string& name, Tensor init) {
    if (contains(name)) throw ConfigError("duplicate parameter name " + name);
    Var v(std::move(init), true);
    params_.emplace(name, v);
    return v;
}

Var ParamStore::add_buffer(const std::string& name, Tensor init) {
    if (contains(name)) throw ConfigError("duplicate buffer name " + name);
    Var v(std::move(init), false);
    buffers_.emplace(name, v);
    return v;
}

bool ParamStore::contains(const std::string& name) const {
    return params_.count(name) > 0 || buffers_.count(name) > 0;
}

Var& ParamStore::get(const std::string& name) {
    if (auto it = params_.find(name); it != params_.end()) return it->second;
    if (auto it = buffers_.find(name); it != buffers_.end()) return it->second;
    throw ConfigError("unknown parameter " + name);
}

const Var& ParamStore::get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
}

std::map<std::string, Var> ParamStore::all() const {
    std::map<std::string, Var> out = params_;
    out.insert(buffers_.begin(), buffers_.end());
    return out;
}

std::vector<Var> ParamStore::trainable() const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const auto& [name, v] : params_) out.push_back(v);
    return out;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, v] : params_) total += v.value().size();
    return total;
}

void ParamStore::zero_grad() {
    for (auto& [name, v] : params_) v.zero_grad();
}

Tensor uniform_fan_in(Shape shape, int fan_in, InitRng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(shape);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

Conv2d Conv2d::create(ParamStore& store, const std::string& name, int in_channels,
                      int out_channels, int kernel, int stride, InitRng& rng) {
    if (kernel % 2 == 0) throw ConfigError(name + ": kernel size must be odd");
    const int fan_in = in_channels * kernel * kernel;
    Conv2d conv;
    conv.weight = store.add_param(
        name + ".weight", uniform_fan_in(Shape{out_channels, in_channels, kernel, kernel}, fan_in, rng));
    conv.bias = store.add_param(name + ".bias", uniform_fan_in(Shape{1, out_channels, 1, 1}, fan_in, rng));
    conv.stride = stride;
    conv.padding = kernel / 2;
    return conv;
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight, bias, stride, padding); }

ConvTranspose2d ConvTranspose2d::create(ParamStore& store, const std::string& name,
                                        int in_channels, int out_channels, int kernel, int stride,
                                        InitRng& rng) {
    if (kernel % 2 == 0) throw ConfigError(name + ": kernel size must be odd");
    const int fan_in = out_channels * kernel * kernel;
    ConvTranspose2d conv;
    conv.weight = store.add_param(
        name + ".weight", uniform_fan_in(Shape{in_channels, out_channels, kernel, kernel}, fan_in, rng));
    conv.bias = store.add_param(name + ".bias", uniform_fan_in(Shape{1, out_channels, 1, 1}, fan_in, rng));
    conv.stride = stride;
    conv.padding = kernel / 2;
    conv.output_padding = stride - 1;
    return conv;
}

Var ConvTranspose2d::operator()(const Var& x) const {
    return ops::conv_transpose2d(x, weight, bias, stride, padding, output_padding);
}

BatchNorm2d BatchNorm2d::create(ParamStore& store, const std::string& name, int channels) {
    BatchNorm2d bn;
    bn.gamma = store.add_param(name + ".gamma", Tensor(Shape{1, channels, 1, 1}, 1.0));
    bn.beta = store.add_param(name + ".beta", Tensor(Shape{1, channels, 1, 1}, 0.0));
    bn.running_mean = store.add_buffer(name + ".running_mean", Tensor(Shape{1, channels, 1, 1}, 0.0));
    bn.running_var = store.add_buffer(name + ".running_var", Tensor(Shape{1, channels, 1, 1}, 1.0));
    return bn;
}

Var BatchNorm2d::operator()(const Var& x, const Context& ctx) const {
    ops::NormOptions options;
    options.mode = ctx.norm;
    options.training = ctx.training;
    // Buffers are handles; mutating through a copy updates the stored tensors.
    Var rm = running_mean;
    Var rv = running_var;
    return ops::batch_norm(x, gamma, beta, rm.mutable_value(), rv.mutable_value(), options);
}

PRelu PRelu::create(ParamStore& store, const std::string& name, int channels) {
    PRelu act;
    act.slope = store.add_param(name + ".slope", Tensor(Shape{1, channels, 1, 1}, 0.25));
    return act;
}

ConvBnPrelu ConvBnPrelu::create(ParamStore& store, const std::string& name, int in_channels,
                                int out_channels, int kernel, int stride, InitRng& rng) {
    ConvBnPrelu block;
    block.conv = Conv2d::create(store, name + ".conv", in_channels, out_channels, kernel, stride, rng);
    block.bn = BatchNorm2d::create(store, name + ".bn", out_channels);
    block.act = PRelu::create(store, name + ".act", out_channels);
    return block;
}

Var ConvBnPrelu::operator()(const Var& x, const Context& ctx) const {
    return act(bn(conv(x), ctx));
}

Optimizer::Optimizer(std::vector<Var> params, Options options)
    : params_(std::move(params)), options_(options) {
    if (!(options_.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
    for (const auto& p : params_) {
        m_.emplace_back(p.shape(), 0.0);
        v_.emplace_back(p.shape(), 0.0);
    }
}

double Optimizer::step() {
    double sq = 0.0;
    for (const auto& p : params_) {
        if (!p.has_grad()) continue;
        for (double g : p.grad().values()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    double clip = 1.0;
    if (options_.clip_norm > 0.0 && norm > options_.clip_norm) clip = options_.clip_norm / norm;

    ++step_;
    const double lr = options_.learning_rate;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Var& p = params_[i];
        if (!p.has_grad()) continue;
        double* w = p.mutable_value().data();
        const double* g = p.grad().data();
        const std::size_t count = p.value().size();
        if (options_.kind == Kind::Sgd) {
            for (std::size_t j = 0; j < count; ++j) w[j] -= lr * clip * g[j];
            continue;
        }
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::size_t j = 0; j < count; ++j) {
            const double gj = clip * g[j];
            m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * gj;
            v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * gj * gj;
            w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
        }
    }
    return norm;
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace uidsc::nn

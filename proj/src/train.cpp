#include "uidsc/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "uidsc/errors.hpp"
#include "uidsc/rng.hpp"

namespace uidsc::train {

namespace {

// Independent random streams derived from the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kDataStream = 2;
constexpr std::uint64_t kChannelStream = 3;
constexpr std::uint64_t kSnrStream = 4;

std::optional<std::filesystem::path> optional_path(const Json& j) {
    if (j.is_null()) return std::nullopt;
    return std::filesystem::path(j.get<std::string>());
}

Json path_json(const std::optional<std::filesystem::path>& p) { return p ? Json(p->string()) : Json(); }

}  // namespace

double SnrSampling::draw(Rng& rng) const {
    if (fixed_db) return *fixed_db;
    return std::uniform_real_distribution<double>(low_db, high_db)(rng);
}

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (image_size < 1) throw ConfigError("train.image_size must be >= 1");
    if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("train.optimizer must be adam or sgd");
    if (clip_norm < 0.0) throw ConfigError("train.clip_norm must be >= 0");
    if (snr.fixed_db) {
        if (!std::isfinite(*snr.fixed_db)) throw ConfigError("train.snr.fixed_db must be finite");
    } else if (!(snr.low_db <= snr.high_db) || !std::isfinite(snr.low_db) || !std::isfinite(snr.high_db)) {
        throw ConfigError("train.snr range is empty");
    }
    if (!(h_c > 0.0)) throw ConfigError("channel.h_c must be > 0");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (stage == 2 && !init_from) throw ConfigError("stage 2 needs data.init_from (a stage-1 checkpoint)");
    if (stage == 1 && model.use_mga) throw ConfigError("stage 1 trains without MGA; set model.use_mga=false");
    if (stage == 2 && model.use_mga && !mask_manifest) throw ConfigError("stage 2 with MGA needs data.mask_manifest");
    model.validate();
    model.check_resolution(image_size, image_size);
}

Json default_config_json() { return to_json(TrainConfig{}); }

Json to_json(const TrainConfig& c) {
    return {
        {"stage", c.stage},
        {"seed", c.seed},
        {"model", codec::to_json(c.model)},
        {"channel", {{"kind", channel::to_string(c.channel)}, {"h_c", c.h_c}, {"equalize", c.equalize}}},
        {"train",
         {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"image_size", c.image_size},
          {"optimizer", c.optimizer},
          {"clip_norm", c.clip_norm},
          {"checkpoint_every", c.checkpoint_every},
          {"snr",
           {{"low_db", c.snr.low_db},
            {"high_db", c.snr.high_db},
            {"fixed_db", c.snr.fixed_db ? Json(*c.snr.fixed_db) : Json()}}}}},
        {"data",
         {{"manifest", c.manifest.string()},
          {"mask_manifest", path_json(c.mask_manifest)},
          {"init_from", path_json(c.init_from)}}},
        {"out_dir", c.out_dir.string()},
    };
}

TrainConfig train_config_from_json(const Json& node) {
    TrainConfig c;
    StrictReader r(node, "");
    r.read("stage", c.stage);
    r.read("seed", c.seed);
    if (r.has("model")) c.model = codec::codec_config_from_json(r.raw("model"));
    {
        StrictReader ch = r.child("channel");
        std::string kind = channel::to_string(c.channel);
        ch.read("kind", kind);
        try {
            c.channel = channel::parse_channel_kind(kind);
        } catch (const Error& e) {
            throw ConfigError(std::string("channel.kind: ") + e.what());
        }
        ch.read("h_c", c.h_c);
        ch.read("equalize", c.equalize);
        ch.finish();
    }
    {
        StrictReader t = r.child("train");
        t.read("learning_rate", c.learning_rate);
        t.read("batch_size", c.batch_size);
        t.read("epochs", c.epochs);
        t.read("image_size", c.image_size);
        t.read("optimizer", c.optimizer);
        t.read("clip_norm", c.clip_norm);
        t.read("checkpoint_every", c.checkpoint_every);
        StrictReader s = t.child("snr");
        s.read("low_db", c.snr.low_db);
        s.read("high_db", c.snr.high_db);
        if (s.has("fixed_db") && !s.raw("fixed_db").is_null()) {
            double v = 0.0;
            s.read("fixed_db", v);
            c.snr.fixed_db = v;
        }
        s.finish();
        t.finish();
    }
    {
        StrictReader d = r.child("data");
        std::string manifest;
        d.read("manifest", manifest);
        c.manifest = manifest;
        try {
            c.mask_manifest = optional_path(d.raw("mask_manifest"));
            c.init_from = optional_path(d.raw("init_from"));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("data paths must be strings: ") + e.what());
        }
        d.finish();
    }
    std::string out = c.out_dir.string();
    r.read("out_dir", out);
    c.out_dir = out;
    r.finish();
    return c;
}

double loss_l2(const Tensor& s, const Tensor& s_hat) {
    if (!(s.shape() == s_hat.shape())) {
        throw ShapeError("loss_l2: " + s.shape().str() + " vs " + s_hat.shape().str());
    }
    if (s.empty()) throw ShapeError("loss_l2: empty batch");
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = s.data()[i] - s_hat.data()[i];
        sum += d * d;
    }
    return sum / static_cast<double>(s.size());
}

std::vector<double> TrainReport::loss_series() const {
    std::vector<double> out;
    for (const auto& e : epochs) out.push_back(e.mean_loss);
    return out;
}

namespace {

Json checkpoint_info(const TrainConfig& c, int epochs_done) {
    return {{"stage", c.stage},
            {"seed", c.seed},
            {"epochs", epochs_done},
            {"channel", channel::to_string(c.channel)},
            {"snr_train_db", c.snr.fixed_db ? Json(*c.snr.fixed_db) : Json()},
            {"snr_range_db", {c.snr.low_db, c.snr.high_db}}};
}

}  // namespace

TrainReport fit(const TrainConfig& config, codec::SemanticCodec& model, const data::TrainingSet& set,
                const EpochCallback& on_epoch) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    std::filesystem::create_directories(config.out_dir);
    const auto report_path = config.out_dir / "report.jsonl";
    std::ofstream report_file(report_path, std::ios::trunc);
    if (!report_file) throw DataError("cannot write " + report_path.string());

    TrainReport report;
    report.config = to_json(config);
    report_file << Json{{"type", "config"}, {"config", report.config}}.dump() << "\n" << std::flush;

    nn::Optimizer::Options opt;
    opt.kind = config.optimizer == "sgd" ? nn::Optimizer::Kind::Sgd : nn::Optimizer::Kind::Adam;
    opt.learning_rate = config.learning_rate;
    opt.clip_norm = config.clip_norm;
    nn::Optimizer optimizer(model.params().trainable(), opt);

    data::BatchStream stream(set, config.batch_size, config.image_size, derive_seed(config.seed, {kDataStream}));
    channel::ChannelConfig cc;
    cc.kind = config.channel;
    cc.h_c = config.h_c;
    cc.equalize = config.equalize;
    cc.seed = derive_seed(config.seed, {kChannelStream});
    channel::Channel link(cc);
    const nn::Context ctx{true, model.config().norm};

    std::uint64_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        double loss_sum = 0.0, norm_sum = 0.0;
        for (const auto& indices : stream.epoch_order(epoch)) {
            data::Batch batch = stream.load(indices, epoch);
            if (config.stage == 1) batch.masks.fill(1.0);
            Rng snr_rng = make_rng(config.seed, {kSnrStream, step});
            std::vector<double> snr(indices.size());
            for (double& s : snr) s = config.snr.draw(snr_rng);

            optimizer.zero_grad();
            const Var target(batch.images);
            const auto out = codec::run_pipeline(model, target, batch.masks, snr, link, ctx);
            const Var loss = ops::mse(out.reconstruction, target);
            const double value = loss.value().data()[0];
            double norm = 0.0;
            if (std::isfinite(value)) {
                backward(loss);
                norm = optimizer.step();
            }
            if (!std::isfinite(value) || !std::isfinite(norm)) {
                const auto snap = config.out_dir / "nan_snapshot.uidsc";
                Json info = checkpoint_info(config, epoch);
                info["failure"] = {{"epoch", epoch}, {"step", step}, {"loss", std::isfinite(value) ? Json(value) : Json("nan")},
                                   {"samples", batch.ids}, {"snr_db", snr}};
                codec::save_checkpoint(snap, model, info);
                report_file << Json{{"type", "failure"}, {"detail", info["failure"]}, {"snapshot", snap.string()}}.dump()
                            << "\n" << std::flush;
                throw NumericError("non-finite " + std::string(std::isfinite(value) ? "gradient" : "loss") +
                                   " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                                   "; snapshot written to " + snap.string());
            }
            loss_sum += value;
            norm_sum += norm;
            ++rec.steps;
            ++step;
        }
        rec.mean_loss = loss_sum / static_cast<double>(rec.steps);
        rec.mean_grad_norm = norm_sum / static_cast<double>(rec.steps);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        report.epochs.push_back(rec);
        report_file << Json{{"type", "epoch"},
                            {"epoch", rec.epoch},
                            {"mean_loss", rec.mean_loss},
                            {"steps", rec.steps},
                            {"mean_grad_norm", rec.mean_grad_norm},
                            {"seconds", rec.seconds}}
                           .dump()
                    << "\n" << std::flush;
        if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 && epoch + 1 < config.epochs) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04d.uidsc", epoch + 1);
            codec::save_checkpoint(config.out_dir / name, model, checkpoint_info(config, epoch + 1));
        }
        if (on_epoch && !on_epoch(rec, model)) break;
    }
    report.checkpoint = config.out_dir / "checkpoint.uidsc";
    codec::save_checkpoint(report.checkpoint, model, checkpoint_info(config, static_cast<int>(report.epochs.size())));
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report_file << Json{{"type", "final"}, {"checkpoint", report.checkpoint.string()}, {"wall_seconds", report.wall_seconds},
                        {"loss_series", report.loss_series()}}
                       .dump()
                << "\n" << std::flush;
    return report;
}

codec::SemanticCodec make_model(const TrainConfig& config) {
    const std::uint64_t init_seed = derive_seed(config.seed, {kInitStream});
    if (config.stage == 1) return codec::SemanticCodec(config.model, init_seed);
    if (!config.init_from) throw ConfigError("stage 2 needs data.init_from (a stage-1 checkpoint)");
    const codec::LoadedModel base = codec::load_checkpoint(*config.init_from);
    codec::CodecConfig mc = base.codec.config();
    mc.use_mga = config.model.use_mga;
    mc.mga = config.model.mga;
    mc.mga_block_indices = config.model.mga_block_indices;
    codec::SemanticCodec model(mc, init_seed);
    const auto missing = codec::load_weights(model, *config.init_from);
    for (const auto& name : missing) {
        if (name.rfind("mga.", 0) != 0) {
            throw CheckpointError(config.init_from->string() + " lacks trunk tensor " + name);
        }
    }
    return model;
}

TrainReport train_stage1(const TrainConfig& config, const EpochCallback& on_epoch) {
    if (config.stage != 1) throw ConfigError("train_stage1 called with stage " + std::to_string(config.stage));
    config.validate();
    const data::TrainingSet set = data::training_set(data::read_manifest(config.manifest));
    codec::SemanticCodec model = make_model(config);
    return fit(config, model, set, on_epoch);
}

TrainReport train_stage2(const TrainConfig& config, const EpochCallback& on_epoch) {
    if (config.stage != 2) throw ConfigError("train_stage2 called with stage " + std::to_string(config.stage));
    config.validate();
    const data::Manifest images = data::read_manifest(config.manifest);
    const data::TrainingSet set = config.mask_manifest
                                      ? data::training_set(images, data::read_manifest(*config.mask_manifest))
                                      : data::training_set(images);
    codec::SemanticCodec model = make_model(config);
    return fit(config, model, set, on_epoch);
}

}  // namespace uidsc::train

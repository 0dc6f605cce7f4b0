// uidsc: dataset preparation, training, SNR sweeps, single-image transmission
// and plot emission.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include "CLI11.hpp"
#include "uidsc/codec.hpp"
#include "uidsc/data.hpp"
#include "uidsc/errors.hpp"
#include "uidsc/eval.hpp"
#include "uidsc/skb.hpp"
#include "uidsc/train.hpp"

namespace fs = std::filesystem;
using namespace uidsc;

namespace {

struct PrepareArgs {
    int synth = 0;
    int size = 64;
    int max_shapes = 3;
    std::uint64_t seed = 0;
    std::string annotations, images, out;
    std::string test_annotations, test_images;
    int test_count = -1;
    double min_area = 1.0;
};

int run_prepare(const PrepareArgs& a) {
    std::printf("seed: %llu\n", static_cast<unsigned long long>(a.seed));
    data::SplitOptions opt;
    opt.seed = a.seed;
    opt.min_area = a.min_area;
    fs::path annotations = a.annotations, images = a.images;
    if (a.synth > 0) {
        if (!a.annotations.empty()) throw ConfigError("--synth and --annotations are mutually exclusive");
        data::SynthOptions so;
        so.count = a.synth;
        so.size = a.size;
        so.seed = a.seed;
        so.max_shapes = a.max_shapes;
        const auto m = data::synth_generate(a.out, so);
        std::printf("synthetic corpus: %zu images in %s\n", m.size(), a.out.c_str());
        annotations = fs::path(a.out) / "annotations.json";
        images = fs::path(a.out) / "images";
        opt.test_count = a.test_count >= 0 ? a.test_count : std::max(1, a.synth / 5);
    } else {
        if (a.annotations.empty() || a.images.empty()) {
            throw ConfigError("prepare-data needs --synth N or both --annotations and --images");
        }
        if (a.test_count >= 0) opt.test_count = a.test_count;
        if (!a.test_annotations.empty()) {
            opt.test_annotations = a.test_annotations;
            opt.test_image_dir = a.test_images.empty() ? fs::path(a.images) : fs::path(a.test_images);
        }
    }
    const auto r = data::build_splits(annotations, images, a.out, opt);
    std::printf("ORI-train %zu, SEG-train %zu, MASK-train %zu, SEG-test %zu, skipped %zu of %zu items\n",
                r.ori_train.size(), r.seg_train.size(), r.mask_train.size(), r.seg_test.size(), r.skipped.size(),
                r.considered);
    return 0;
}

struct TrainArgs {
    std::string config;
    std::vector<std::string> sets;
    int stage = 0;
    std::string channel;
    double fixed_snr = NAN;
    std::string init_from, manifest, mask_manifest, out;
    std::int64_t seed = -1;
    int epochs = 0;
    bool no_mga = false;
};

int run_train(const TrainArgs& a) {
    Json cfg = a.config.empty() ? train::default_config_json()
                                : train::to_json(train::train_config_from_json(read_json_file(a.config)));
    const Json defaults = train::default_config_json();
    for (const auto& s : a.sets) apply_override(cfg, defaults, s);
    train::TrainConfig c = train::train_config_from_json(cfg);
    if (a.stage) c.stage = a.stage;
    if (!a.channel.empty()) c.channel = channel::parse_channel_kind(a.channel);
    if (std::isfinite(a.fixed_snr)) {
        c.snr.fixed_db = a.fixed_snr;
        c.model.use_cse = false;
    }
    if (!a.init_from.empty()) c.init_from = a.init_from;
    if (!a.manifest.empty()) c.manifest = a.manifest;
    if (!a.mask_manifest.empty()) c.mask_manifest = a.mask_manifest;
    if (!a.out.empty()) c.out_dir = a.out;
    if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
    if (a.epochs > 0) c.epochs = a.epochs;
    if (c.stage == 2) {
        if (!c.init_from) throw ConfigError("stage 2 requires --init-from <stage-1 checkpoint>");
        if (a.stage == 2) c.model.use_mga = true;
        if (a.no_mga) c.model.use_mga = false;
    }
    if (c.manifest.empty()) throw ConfigError("no training manifest (use --manifest or data.manifest)");
    std::printf("seed: %llu\n", static_cast<unsigned long long>(c.seed));
    std::fflush(stdout);
    const auto on_epoch = [](const train::EpochRecord& r, const codec::SemanticCodec&) {
        std::printf("epoch %d  loss %.6g  grad-norm %.4g  %.1fs\n", r.epoch + 1, r.mean_loss, r.mean_grad_norm, r.seconds);
        std::fflush(stdout);
        return true;
    };
    const auto report = c.stage == 1 ? train::train_stage1(c, on_epoch) : train::train_stage2(c, on_epoch);
    std::printf("checkpoint: %s\n", report.checkpoint.string().c_str());
    return 0;
}

struct EvalArgs {
    std::vector<std::string> models;
    std::vector<std::string> fixed;
    std::string test, channel = "awgn", out = "runs/eval", lpips;
    std::vector<double> grid;
    int realizations = 10;
    std::uint64_t seed = 0;
    std::size_t limit = 0;
    int size = 0;
    bool plot = false;
    bool transparent = false;
    double h_c = 1.0;
};

std::pair<std::string, std::string> split_assignment(const std::string& text, const char* flag) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
        throw ConfigError(std::string(flag) + " expects name=path, got '" + text + "'");
    }
    return {text.substr(0, eq), text.substr(eq + 1)};
}

codec::LoadedModel load_named(const std::string& name, const std::string& path) {
    try {
        return codec::load_checkpoint(path);
    } catch (const CheckpointError& e) {
        throw CheckpointError("model '" + name + "': " + e.what());
    }
}

int run_eval(const EvalArgs& a) {
    std::printf("seed: %llu\n", static_cast<unsigned long long>(a.seed));
    if (a.test.empty()) throw ConfigError("eval needs --test <manifest>");
    if (a.models.empty() && a.fixed.empty()) throw ConfigError("eval needs at least one --model or --fixed");
    eval::SweepSpec spec;
    spec.channel = channel::parse_channel_kind(a.channel);
    spec.h_c = a.h_c;
    if (!a.grid.empty()) spec.grid = a.grid;
    spec.realizations = a.realizations;
    spec.seed = a.seed;
    spec.transparent_row = a.transparent;
    spec.validate();

    std::vector<std::unique_ptr<codec::LoadedModel>> loaded;
    std::vector<eval::ModelEntry> entries;
    std::set<std::string> names;
    auto add = [&](const std::string& name, const std::string& path) {
        if (!names.insert(name).second) throw ConfigError("duplicate model name '" + name + "'");
        loaded.push_back(std::make_unique<codec::LoadedModel>(load_named(name, path)));
        entries.push_back({name, &loaded.back()->codec});
    };
    for (const auto& m : a.models) {
        const auto [name, path] = split_assignment(m, "--model");
        add(name, path);
    }
    std::map<double, std::string> fixed;
    for (const auto& f : a.fixed) {
        const auto [snr_text, path] = split_assignment(f, "--fixed");
        double snr = 0.0;
        try {
            snr = std::stod(snr_text);
        } catch (const std::exception&) {
            throw ConfigError("--fixed expects <snr_train>=<path>, got '" + f + "'");
        }
        char name[64];
        std::snprintf(name, sizeof name, "DJSCC_FIXED_%g", snr);
        add(name, path);
        fixed[snr] = name;
    }
    std::unique_ptr<metrics::Lpips> lpips;
    if (!a.lpips.empty()) lpips = std::make_unique<metrics::Lpips>(metrics::Lpips::load(a.lpips));

    const auto samples = eval::load_samples(data::read_manifest(a.test), a.limit, a.size);
    eval::Table table = eval::sweep(spec, entries, samples, lpips.get());
    if (!fixed.empty()) eval::combination_curve(table, fixed, spec.grid);
    fs::create_directories(a.out);
    const fs::path csv = fs::path(a.out) / "sweep.csv";
    eval::write_csv(csv, table);
    std::printf("table: %s (%zu rows)\n", csv.string().c_str(), table.rows.size());
    if (a.plot) {
        for (const auto& p : eval::write_plot_data(fs::path(a.out) / "plot", table)) std::printf("plot data: %s\n", p.string().c_str());
    }
    return 0;
}

struct TransmitArgs {
    std::string model, image, image_id, instruction, channel = "awgn", provider = "oracle";
    std::string annotations, remote_url, out = "runs/transmit", lpips, cache_dir;
    double snr = 10.0;
    std::uint64_t seed = 0;
    int timeout_ms = 30000;
    bool no_cache = false;
};

int run_transmit(const TransmitArgs& a) {
    std::printf("seed: %llu\n", static_cast<unsigned long long>(a.seed));
    if (a.model.empty() || a.image.empty() || a.instruction.empty()) {
        throw ConfigError("transmit needs --model, --image and --instruction");
    }
    std::shared_ptr<skb::MaskProvider> remote;
    if (!a.remote_url.empty()) {
        remote = std::make_shared<skb::RemoteMaskProvider>(skb::RemoteOptions{a.remote_url, std::chrono::milliseconds(a.timeout_ms)});
        if (!a.no_cache) {
            remote = std::make_shared<skb::CachedMaskProvider>(
                remote, a.cache_dir.empty() ? skb::default_cache_dir() : fs::path(a.cache_dir));
        }
    }
    std::shared_ptr<skb::MaskProvider> provider;
    if (a.provider == "oracle") {
        if (a.annotations.empty()) throw ConfigError("--provider oracle needs --annotations");
        provider = std::make_shared<skb::AnnotationOracle>(coco::load(a.annotations));
    } else if (a.provider == "remote") {
        if (!remote) throw ConfigError("--provider remote needs --remote-url");
        provider = remote;
    } else {
        throw ConfigError("--provider must be oracle or remote");
    }
    const auto model = load_named("transmit", a.model);
    const Image image = load_image(a.image, 3);
    channel::ChannelConfig cc;
    cc.kind = channel::parse_channel_kind(a.channel);
    cc.snr_db = a.snr;
    cc.seed = a.seed;
    std::unique_ptr<metrics::Lpips> lpips;
    if (!a.lpips.empty()) lpips = std::make_unique<metrics::Lpips>(metrics::Lpips::load(a.lpips));
    const std::string id = a.image_id.empty() ? fs::path(a.image).filename().string() : a.image_id;
    const auto r = eval::transmit_demo(image, id, a.instruction, *provider, a.snr, cc, model.codec, a.out, lpips.get());
    std::printf("psnr %.3f dB (masked region %.3f dB), ssim %.4f; panel in %s\n", r.full.psnr_db,
                r.masked_region.psnr_db, r.full.ssim, a.out.c_str());
    return 0;
}

// Minimal SVG line chart, one per plot-data file.
void write_svg(const fs::path& path, const std::string& title, const eval::Table& table, const std::string& metric,
               const std::string& region) {
    std::vector<std::string> models;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& r : table.rows) {
        if (r.metric != metric || r.region != region || !std::isfinite(r.snr_db) || !std::isfinite(r.mean)) continue;
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
        xmin = std::min(xmin, r.snr_db);
        xmax = std::max(xmax, r.snr_db);
        ymin = std::min(ymin, r.mean);
        ymax = std::max(ymax, r.mean);
    }
    if (models.empty()) return;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double W = 640, H = 420, L = 60, R = 170, T = 30, B = 50;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(L) + "\" y=\"18\">" + title + "</text>\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, H - B, W - R, H - B);
    s += buf;
    std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, T, L, H - B);
    s += buf;
    for (int i = 0; i <= 4; ++i) {
        const double x = xmin + (xmax - xmin) * i / 4, y = ymin + (ymax - ymin) * i / 4;
        std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.3g</text>\n", px(x), H - B + 18, x);
        s += buf;
        std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3g</text>\n", L - 6, py(y) + 4, y);
        s += buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">SNR (dB)</text>\n", (L + W - R) / 2, H - 12);
    s += buf;
    for (std::size_t m = 0; m < models.size(); ++m) {
        const auto curve = table.curve(models[m], region, metric);
        std::string pts;
        for (const auto& [x, y] : curve) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(x), py(y));
            pts += buf;
        }
        const char* color = colors[m % 8];
        s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\">%s</text>\n", W - R + 10, T + 16.0 * (m + 1), color,
                      models[m].c_str());
        s += buf;
    }
    s += "</svg>\n";
    write_file_atomic(path, s);
}

int run_plot(const std::string& table_path, const std::string& out) {
    const eval::Table table = eval::read_csv(table_path);
    for (const auto& p : eval::write_plot_data(out, table)) {
        const std::string stem = p.stem().string();
        const auto cut = stem.rfind('_');
        const std::string metric = stem.substr(0, cut), region = stem.substr(cut + 1);
        const fs::path svg = fs::path(out) / (stem + ".svg");
        write_svg(svg, metric + " (" + region + ")", table, metric, region);
        std::printf("%s\n%s\n", p.string().c_str(), svg.string().c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"User-intent-driven semantic image transmission over simulated wireless channels"};
    app.require_subcommand(1);

    PrepareArgs prep;
    auto* p = app.add_subcommand("prepare-data", "Build ORI/SEG/MASK/SEG-test manifests");
    p->add_option("--synth", prep.synth, "Generate N synthetic images instead of reading annotations");
    p->add_option("--size", prep.size, "Synthetic image side length");
    p->add_option("--max-shapes", prep.max_shapes, "Synthetic shapes per image (upper bound)");
    p->add_option("--seed", prep.seed, "Random seed");
    p->add_option("--annotations", prep.annotations, "Instance-segmentation annotation file");
    p->add_option("--images", prep.images, "Directory holding the annotated images");
    p->add_option("--test-annotations", prep.test_annotations, "Separate pool for SEG-test");
    p->add_option("--test-images", prep.test_images, "Image directory of the SEG-test pool");
    p->add_option("--test-count", prep.test_count, "Images drawn for SEG-test");
    p->add_option("--min-area", prep.min_area, "Minimum instance area in pixels");
    p->add_option("--out", prep.out, "Output directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a codec (stage 1 or 2)");
    t->add_option("--config", tr.config, "JSON run config");
    t->add_option("--set", tr.sets, "Override a config key, e.g. train.epochs=5");
    t->add_option("--stage", tr.stage, "Training stage")->check(CLI::IsMember({1, 2}));
    t->add_option("--channel", tr.channel, "awgn or rayleigh")->check(CLI::IsMember({"awgn", "rayleigh"}));
    t->add_option("--fixed-snr", tr.fixed_snr, "Train a fixed-SNR baseline without channel-state input");
    t->add_option("--init-from", tr.init_from, "Stage-1 checkpoint (stage 2)");
    t->add_option("--manifest", tr.manifest, "Training images manifest");
    t->add_option("--mask-manifest", tr.mask_manifest, "Masks manifest aligned with --manifest");
    t->add_option("--out", tr.out, "Output directory");
    t->add_option("--seed", tr.seed, "Random seed");
    t->add_option("--epochs", tr.epochs, "Epochs");
    t->add_flag("--no-mga", tr.no_mga, "Stage 2 without mask-guided attention");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "SNR sweep over trained models");
    e->add_option("--model", ev.models, "name=checkpoint")->take_all();
    e->add_option("--fixed", ev.fixed, "snr_train=checkpoint of a fixed-SNR baseline")->take_all();
    e->add_option("--test", ev.test, "SEG-test manifest");
    e->add_option("--channel", ev.channel, "awgn or rayleigh")->check(CLI::IsMember({"awgn", "rayleigh"}));
    e->add_option("--h-c", ev.h_c, "Rayleigh gain variance");
    e->add_option("--grid", ev.grid, "Evaluation SNRs in dB")->delimiter(',');
    e->add_option("--realizations", ev.realizations, "Channel realizations per image and SNR");
    e->add_option("--seed", ev.seed, "Random seed");
    e->add_option("--limit", ev.limit, "Use only the first N test entries");
    e->add_option("--size", ev.size, "Pad/crop test images to this side length");
    e->add_option("--lpips", ev.lpips, "LPIPS backbone archive");
    e->add_option("--out", ev.out, "Output directory");
    e->add_flag("--plot", ev.plot, "Also write per-metric curve files");
    e->add_flag("--transparent", ev.transparent, "Add a noiseless row");

    TransmitArgs tx;
    auto* x = app.add_subcommand("transmit", "Send one image region selected by an instruction");
    x->add_option("--model", tx.model, "Checkpoint");
    x->add_option("--image", tx.image, "Image file");
    x->add_option("--image-id", tx.image_id, "Annotation image id or file name (default: file name)");
    x->add_option("--instruction", tx.instruction, "transmit:<category>[#i] or free text");
    x->add_option("--snr", tx.snr, "Channel SNR in dB");
    x->add_option("--channel", tx.channel, "awgn or rayleigh")->check(CLI::IsMember({"awgn", "rayleigh"}));
    x->add_option("--provider", tx.provider, "oracle or remote")->check(CLI::IsMember({"oracle", "remote"}));
    x->add_option("--annotations", tx.annotations, "Annotation file for the oracle");
    x->add_option("--remote-url", tx.remote_url, "Mask service URL (http://host:port/path)");
    x->add_option("--timeout-ms", tx.timeout_ms, "Mask service timeout");
    x->add_option("--cache-dir", tx.cache_dir, "Mask cache directory (default $UIDSC_CACHE_DIR)");
    x->add_flag("--no-cache", tx.no_cache, "Bypass the mask cache");
    x->add_option("--lpips", tx.lpips, "LPIPS backbone archive");
    x->add_option("--seed", tx.seed, "Channel seed");
    x->add_option("--out", tx.out, "Output directory");

    std::string plot_table, plot_out = "runs/plot";
    auto* pl = app.add_subcommand("plot", "Curve files and SVG charts from a sweep table");
    pl->add_option("--table", plot_table, "sweep.csv")->required();
    pl->add_option("--out", plot_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : static_cast<int>(ExitCode::Usage);
    }
    try {
        if (*p) return run_prepare(prep);
        if (*t) return run_train(tr);
        if (*e) return run_eval(ev);
        if (*x) return run_transmit(tx);
        if (*pl) return run_plot(plot_table, plot_out);
    } catch (const Error& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return static_cast<int>(err.exit_code());
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return static_cast<int>(ExitCode::Failure);
    }
    return static_cast<int>(ExitCode::Usage);
}

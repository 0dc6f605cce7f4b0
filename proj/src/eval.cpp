#include "uidsc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "uidsc/errors.hpp"
#include "uidsc/rng.hpp"

namespace uidsc::eval {

namespace fs = std::filesystem;

std::vector<double> default_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 12; ++i) g.push_back(-5.0 + 2.5 * i);
    return g;
}

void SweepSpec::validate() const {
    if (grid.empty()) throw ConfigError("sweep grid is empty");
    for (double s : grid)
        if (!std::isfinite(s)) throw ConfigError("sweep grid values must be finite");
    if (realizations < 1) throw ConfigError("realizations must be >= 1");
    if (!(h_c > 0.0)) throw ConfigError("h_c must be > 0");
}

std::vector<EvalSample> load_samples(const data::Manifest& manifest, std::size_t limit, int size) {
    if (manifest.empty()) throw DataError("evaluation manifest '" + manifest.split + "' is empty");
    std::vector<EvalSample> out;
    const std::size_t count = limit > 0 ? std::min(limit, manifest.size()) : manifest.size();
    for (std::size_t i = 0; i < count; ++i) {
        const auto& e = manifest.entries[i];
        EvalSample s;
        s.image = load_image(e.image, 3);
        s.mask = e.mask ? load_image(*e.mask, 1) : Mask(s.image.height, s.image.width, 1, 1.0);
        if (!s.mask.same_geometry(s.image)) throw DataError("mask does not match " + e.image.string());
        if (size > 0) {
            Rng rng = make_rng(0x5eed, {i});
            auto r = data::crop_or_pad(s.image, &s.mask, size, rng);
            s.image = std::move(r.image);
            s.mask = std::move(r.mask);
        }
        s.id = std::to_string(e.image_id) + (e.annotation_id >= 0 ? "_" + std::to_string(e.annotation_id) : "");
        out.push_back(std::move(s));
    }
    return out;
}

const Row* Table::find(const std::string& model, double snr_db, const std::string& region,
                       const std::string& metric) const {
    for (const auto& r : rows) {
        const bool same_snr = r.snr_db == snr_db || std::abs(r.snr_db - snr_db) < 1e-9;
        if (r.model == model && same_snr && r.region == region && r.metric == metric) return &r;
    }
    return nullptr;
}

std::vector<std::pair<double, double>> Table::curve(const std::string& model, const std::string& region,
                                                    const std::string& metric) const {
    std::vector<std::pair<double, double>> out;
    for (const auto& r : rows)
        if (r.model == model && r.region == region && r.metric == metric) out.emplace_back(r.snr_db, r.mean);
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

struct Accumulator {
    std::vector<double> values;

    void add(double v) { values.push_back(v); }
    double mean() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }
    double stderr_() const {
        if (values.size() < 2) return 0.0;
        const double m = mean();
        if (!std::isfinite(m)) return 0.0;
        double ss = 0.0;
        for (double v : values) ss += (v - m) * (v - m);
        return std::sqrt(ss / static_cast<double>(values.size() - 1) / static_cast<double>(values.size()));
    }
};

Tensor repeat(const Tensor& one, int times) {
    Tensor out(Shape{times, one.c(), one.h(), one.w()});
    for (int r = 0; r < times; ++r) std::copy(one.data(), one.data() + one.size(), out.sample(r));
    return out;
}

}  // namespace

Table sweep(const SweepSpec& spec, const std::vector<ModelEntry>& models, const std::vector<EvalSample>& samples,
            const metrics::Lpips* lpips) {
    spec.validate();
    if (samples.empty()) throw DataError("sweep needs at least one evaluation sample");
    if (models.empty()) throw ConfigError("sweep needs at least one model");
    NoGradGuard guard;

    struct Point {
        double snr;
        int realizations;
        bool transparent;
    };
    std::vector<Point> points;
    for (double s : spec.grid) points.push_back({s, spec.realizations, false});
    if (spec.transparent_row) points.push_back({std::numeric_limits<double>::infinity(), 1, true});

    const std::vector<std::string> metric_names = lpips ? std::vector<std::string>{"psnr", "ssim", "lpips"}
                                                        : std::vector<std::string>{"psnr", "ssim"};
    Table table;
    for (const auto& model : models) {
        if (!model.codec) throw ConfigError("model '" + model.name + "' has no codec");
        for (std::size_t p = 0; p < points.size(); ++p) {
            const Point& pt = points[p];
            std::map<std::pair<std::string, std::string>, Accumulator> acc;
            for (std::size_t i = 0; i < samples.size(); ++i) {
                const auto& sample = samples[i];
                channel::ChannelConfig cc;
                cc.kind = pt.transparent ? channel::ChannelKind::Awgn : spec.channel;
                cc.h_c = spec.h_c;
                cc.equalize = spec.equalize;
                cc.seed = derive_seed(spec.seed, {i, p});
                channel::Channel link(cc);
                const std::vector<double> snr(static_cast<std::size_t>(pt.realizations), pt.snr);
                const auto out = codec::run_pipeline(*model.codec, Var(repeat(to_tensor(sample.image), pt.realizations)),
                                                     repeat(to_tensor(sample.mask), pt.realizations), snr, link,
                                                     nn::Context{false, model.codec->config().norm});
                for (int r = 0; r < pt.realizations; ++r) {
                    const Image recon = from_tensor(out.reconstruction.value(), r);
                    const auto full = metrics::full_metrics(recon, sample.image, lpips);
                    const auto masked = metrics::masked_metrics(recon, sample.image, sample.mask, lpips);
                    for (const auto* rec : {&full, &masked}) {
                        const std::string region = metrics::to_string(rec->region);
                        acc[{region, "psnr"}].add(rec->psnr_db);
                        acc[{region, "ssim"}].add(rec->ssim);
                        if (rec->lpips) acc[{region, "lpips"}].add(*rec->lpips);
                    }
                }
            }
            for (const std::string region : {"full", "masked"}) {
                for (const auto& metric : metric_names) {
                    const auto& a = acc.at({region, metric});
                    table.rows.push_back({model.name, channel::to_string(pt.transparent ? channel::ChannelKind::Awgn : spec.channel),
                                          pt.snr, region, metric, a.mean(), a.stderr_(), a.values.size(), model.name});
                }
            }
        }
    }
    return table;
}

std::vector<Selection> combination_selection(const std::vector<double>& snr_train_db, const std::vector<double>& grid) {
    if (snr_train_db.empty()) throw ConfigError("combination curve needs at least one fixed-SNR model");
    std::vector<double> trained = snr_train_db;
    std::sort(trained.begin(), trained.end());
    std::vector<Selection> out;
    for (double s : grid) {
        double best = trained.front();
        for (double t : trained) {
            // Ascending scan with strict improvement keeps the lower value on ties.
            if (std::abs(t - s) < std::abs(best - s)) best = t;
        }
        out.push_back({s, best});
    }
    return out;
}

void combination_curve(Table& table, const std::map<double, std::string>& fixed, const std::vector<double>& grid,
                       const std::string& name) {
    std::vector<double> trained;
    for (const auto& [snr, model] : fixed) trained.push_back(snr);
    std::vector<Row> added;
    for (const auto& sel : combination_selection(trained, grid)) {
        const std::string& source = fixed.at(sel.snr_train_db);
        bool any = false;
        for (const auto& r : table.rows) {
            if (r.model != source || std::abs(r.snr_db - sel.snr_db) > 1e-9) continue;
            Row copy = r;
            copy.model = name;
            copy.source = source;
            added.push_back(std::move(copy));
            any = true;
        }
        if (!any) {
            throw DataError("combination curve: model '" + source + "' has no rows at " + std::to_string(sel.snr_db) + " dB");
        }
    }
    table.rows.insert(table.rows.end(), added.begin(), added.end());
}

namespace {

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
}

}  // namespace

void write_csv(const fs::path& path, const Table& table) {
    std::string text = "model,channel,snr_db,region,metric,mean,stderr,n,source\n";
    for (const auto& r : table.rows) {
        text += r.model + "," + r.channel + "," + fmt(r.snr_db) + "," + r.region + "," + r.metric + "," + fmt(r.mean) +
                "," + fmt(r.stderr_) + "," + std::to_string(r.n) + "," + r.source + "\n";
    }
    write_file_atomic(path, text);
}

Table read_csv(const fs::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line.rfind("model,channel,snr_db", 0) != 0) {
        throw DataError(path.string() + " is not a sweep table");
    }
    Table t;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() == 8) f.push_back(f[0]);
        if (f.size() != 9) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 9 columns");
        try {
            t.rows.push_back({f[0], f[1], parse_double(f[2]), f[3], f[4], parse_double(f[5]), parse_double(f[6]),
                              static_cast<std::size_t>(std::stoull(f[7])), f[8]});
        } catch (const std::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return t;
}

std::vector<fs::path> write_plot_data(const fs::path& dir, const Table& table) {
    std::set<std::pair<std::string, std::string>> keys;
    std::vector<std::string> models;
    for (const auto& r : table.rows) {
        keys.insert({r.metric, r.region});
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    }
    std::vector<fs::path> written;
    for (const auto& [metric, region] : keys) {
        std::set<double> snrs;
        for (const auto& r : table.rows)
            if (r.metric == metric && r.region == region) snrs.insert(r.snr_db);
        std::string text = "snr_db";
        for (const auto& m : models) text += "," + m;
        text += "\n";
        for (double s : snrs) {
            text += fmt(s);
            for (const auto& m : models) {
                const Row* r = table.find(m, s, region, metric);
                text += "," + (r ? fmt(r->mean) : std::string());
            }
            text += "\n";
        }
        const fs::path path = dir / (metric + "_" + region + ".csv");
        write_file_atomic(path, text);
        written.push_back(path);
    }
    return written;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ShapeError("spearman needs two equally long series of length >= 2");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

namespace {

Json record_json(const metrics::MetricRecord& r) {
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(fmt(v)); };
    Json j{{"region", metrics::to_string(r.region)}, {"psnr_db", num(r.psnr_db)}, {"ssim", r.ssim}};
    j["lpips"] = r.lpips ? Json(*r.lpips) : Json("unavailable");
    return j;
}

}  // namespace

TransmitResult transmit_demo(const Image& image, const std::string& image_id, const std::string& instruction,
                             skb::MaskProvider& provider, double snr_db, const channel::ChannelConfig& channel,
                             const codec::SemanticCodec& model, const fs::path& out_dir, const metrics::Lpips* lpips) {
    TransmitResult r;
    r.original = image;
    r.mask = provider.provide_mask({image, image_id, instruction});
    r.masked = skb::apply_mask(image, r.mask);
    channel::Channel link(channel);
    auto result = codec::forward_pipeline(model, r.masked, r.mask, snr_db, link);
    r.reconstruction = std::move(result.reconstruction);
    r.diagnostics = std::move(result.diagnostics);
    r.full = metrics::full_metrics(r.reconstruction, r.masked, lpips);
    r.masked_region = metrics::masked_metrics(r.reconstruction, r.masked, r.mask, lpips);

    fs::create_directories(out_dir);
    save_png(out_dir / "original.png", r.original);
    save_png(out_dir / "mask.png", r.mask);
    save_png(out_dir / "masked.png", r.masked);
    save_png(out_dir / "reconstruction.png", r.reconstruction);
    const auto& d = r.diagnostics;
    Json info{{"image_id", image_id},
              {"instruction", instruction},
              {"provider", provider.kind()},
              {"channel", channel::to_string(channel.kind)},
              {"snr_db", snr_db},
              {"seed", channel.seed},
              {"mask_area", mask_area(r.mask)},
              {"bandwidth_ratio", d.bandwidth_ratio},
              {"measured_snr_db", std::isfinite(d.measured_snr_db.at(0)) ? Json(d.measured_snr_db[0]) : Json("inf")},
              {"gain", {d.gains.at(0).real(), d.gains.at(0).imag()}},
              {"deep_fade", static_cast<bool>(d.deep_fade.at(0))},
              {"full", record_json(r.full)},
              {"masked", record_json(r.masked_region)}};
    write_json_file(out_dir / "metrics.json", info);
    return r;
}

}  // namespace uidsc::eval

#include "uidsc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "uidsc/errors.hpp"
#include "uidsc/skb.hpp"

namespace uidsc::data {

namespace fs = std::filesystem;

void write_manifest(const fs::path& path, const Manifest& manifest) {
    const fs::path base = path.parent_path();
    std::string text;
    for (const auto& e : manifest.entries) {
        Json j{{"split", manifest.split},
               {"image", fs::relative(e.image, base.empty() ? fs::path(".") : base).generic_string()},
               {"image_id", e.image_id},
               {"annotation_id", e.annotation_id}};
        if (e.mask) j["mask"] = fs::relative(*e.mask, base.empty() ? fs::path(".") : base).generic_string();
        text += j.dump() + "\n";
    }
    write_file_atomic(path, text);
}

Manifest read_manifest(const fs::path& path) {
    std::istringstream in(read_text_file(path));
    const fs::path base = path.parent_path();
    Manifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const Json j = Json::parse(line);
            const std::string split = j.at("split").get<std::string>();
            if (m.split.empty()) m.split = split;
            else if (m.split != split) throw DataError("mixed splits '" + m.split + "' and '" + split + "'");
            ManifestEntry e;
            e.image = base / j.at("image").get<std::string>();
            if (j.contains("mask")) e.mask = base / j.at("mask").get<std::string>();
            e.image_id = j.at("image_id").get<std::int64_t>();
            e.annotation_id = j.value("annotation_id", static_cast<std::int64_t>(-1));
            m.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return m;
}

CropResult crop_or_pad(const Image& image, const Mask* mask, int size, Rng& rng) {
    if (size < 1 || image.height < 1 || image.width < 1) throw ShapeError("crop_or_pad needs positive sizes");
    if (mask && (!mask->same_geometry(image) || mask->channels != 1)) {
        throw ShapeError("crop_or_pad: mask does not match the image");
    }
    CropResult r;
    if (image.height > size) r.offset_y = std::uniform_int_distribution<int>(0, image.height - size)(rng);
    if (image.width > size) r.offset_x = std::uniform_int_distribution<int>(0, image.width - size)(rng);
    auto cut = [&](const Image& src) {
        Image out(size, size, src.channels);
        const int rows = std::min(size, src.height - r.offset_y);
        const int cols = std::min(size, src.width - r.offset_x);
        for (int y = 0; y < rows; ++y) {
            const double* from = &src.data[(static_cast<std::size_t>(y + r.offset_y) * src.width + r.offset_x) * src.channels];
            std::copy(from, from + static_cast<std::size_t>(cols) * src.channels,
                      &out.data[static_cast<std::size_t>(y) * size * src.channels]);
        }
        return out;
    };
    r.image = cut(image);
    if (mask) r.mask = cut(*mask);
    return r;
}

namespace {

fs::path locate_image(const fs::path& dir, const std::string& file_name) {
    return dir / file_name;
}

struct Instance {
    const coco::Annotation* annotation;
    Mask mask;
    std::size_t area;
};

std::string stem_for(std::int64_t image_id, std::int64_t ann_id) {
    return std::to_string(image_id) + "_" + std::to_string(ann_id) + ".png";
}

}  // namespace

SplitResult build_splits(const fs::path& annotation_file, const fs::path& image_dir, const fs::path& out_dir,
                         const SplitOptions& options) {
    const coco::Dataset train_pool = coco::load(annotation_file);
    const bool separate_test = options.test_annotations.has_value();
    const coco::Dataset test_pool_storage = separate_test ? coco::load(*options.test_annotations) : coco::Dataset{};
    const coco::Dataset& test_pool = separate_test ? test_pool_storage : train_pool;
    const fs::path test_dir = separate_test && options.test_image_dir ? *options.test_image_dir : image_dir;

    SplitResult result;
    result.ori_train.split = kOriTrain;
    result.seg_train.split = kSegTrain;
    result.mask_train.split = kMaskTrain;
    result.seg_test.split = kSegTest;
    std::size_t failures = 0;
    auto skip = [&](std::string item, std::string reason, bool failure) {
        result.skipped.push_back({std::move(item), std::move(reason)});
        if (failure) ++failures;
    };

    // Test ids: seeded draw among images that carry at least one non-crowd instance.
    std::vector<std::int64_t> candidates;
    for (const auto& info : test_pool.images) {
        for (const auto* a : test_pool.annotations_for(info.id)) {
            if (!a->iscrowd) {
                candidates.push_back(info.id);
                break;
            }
        }
    }
    if (options.test_count < 0) throw ConfigError("test_count must be >= 0");
    if (!separate_test && options.test_count >= static_cast<int>(train_pool.images.size()) && options.test_count > 0) {
        throw DataError("test_count " + std::to_string(options.test_count) + " leaves no training images out of " +
                        std::to_string(train_pool.images.size()));
    }
    Rng rng = make_rng(options.seed, {0x7e57});
    std::shuffle(candidates.begin(), candidates.end(), rng);
    if (candidates.size() > static_cast<std::size_t>(options.test_count)) candidates.resize(options.test_count);
    std::sort(candidates.begin(), candidates.end());
    const std::set<std::int64_t> test_ids(candidates.begin(), candidates.end());

    fs::create_directories(out_dir / "ori");
    fs::create_directories(out_dir / "seg");
    fs::create_directories(out_dir / "mask");

    // Loads one image and rasterizes its usable instances; nullopt when the image is unusable.
    auto process = [&](const coco::Dataset& pool, const coco::ImageInfo& info, const fs::path& dir)
        -> std::optional<std::pair<Image, std::vector<Instance>>> {
        ++result.considered;
        const std::string item = "image " + std::to_string(info.id) + " (" + info.file_name + ")";
        const fs::path path = locate_image(dir, info.file_name);
        Image image;
        try {
            image = load_image(path, 3);
        } catch (const Error& e) {
            skip(item, e.what(), true);
            return std::nullopt;
        }
        if (image.height != info.height || image.width != info.width) {
            skip(item, "decoded size differs from the annotation", true);
            return std::nullopt;
        }
        std::vector<Instance> instances;
        for (const auto* a : pool.annotations_for(info.id)) {
            ++result.considered;
            const std::string aitem = "annotation " + std::to_string(a->id);
            if (a->iscrowd) {
                skip(aitem, "crowd region", false);
                continue;
            }
            try {
                Mask mask = coco::rasterize(a->segmentation, info.height, info.width);
                const std::size_t area = mask_area(mask);
                if (static_cast<double>(area) < options.min_area || area == 0) {
                    skip(aitem, "mask area " + std::to_string(area) + " below minimum", false);
                    continue;
                }
                instances.push_back({a, std::move(mask), area});
            } catch (const Error& e) {
                skip(aitem, e.what(), true);
            }
        }
        return std::make_pair(std::move(image), std::move(instances));
    };

    auto emit = [&](const Image& image, const Instance& inst, Manifest& seg, Manifest* mask_split) {
        const std::string name = stem_for(inst.annotation->image_id, inst.annotation->id);
        const fs::path seg_path = out_dir / "seg" / name;
        const fs::path mask_path = out_dir / "mask" / name;
        save_png(seg_path, skb::apply_mask(image, inst.mask));
        save_png(mask_path, inst.mask);
        seg.entries.push_back({seg_path, mask_path, inst.annotation->image_id, inst.annotation->id});
        if (mask_split) mask_split->entries.push_back({mask_path, std::nullopt, inst.annotation->image_id, inst.annotation->id});
    };

    for (const auto& info : train_pool.images) {
        if (!separate_test && test_ids.count(info.id)) continue;
        auto loaded = process(train_pool, info, image_dir);
        if (!loaded) continue;
        const fs::path ori_path = out_dir / "ori" / fs::path(info.file_name).filename();
        fs::copy_file(locate_image(image_dir, info.file_name), ori_path, fs::copy_options::overwrite_existing);
        result.ori_train.entries.push_back({ori_path, std::nullopt, info.id, -1});
        for (const auto& inst : loaded->second) emit(loaded->first, inst, result.seg_train, &result.mask_train);
    }
    for (std::int64_t id : test_ids) {
        const coco::ImageInfo* info = test_pool.find_image(id);
        auto loaded = process(test_pool, *info, test_dir);
        if (!loaded) continue;
        if (loaded->second.empty()) {
            skip("image " + std::to_string(id), "no usable instance for SEG-test", false);
            continue;
        }
        const auto largest = std::max_element(loaded->second.begin(), loaded->second.end(),
                                              [](const Instance& a, const Instance& b) { return a.area < b.area; });
        emit(loaded->first, *largest, result.seg_test, nullptr);
    }

    Json report{{"considered", result.considered}, {"failures", failures}, {"skipped", Json::array()}};
    for (const auto& s : result.skipped) report["skipped"].push_back({{"item", s.item}, {"reason", s.reason}});
    write_json_file(out_dir / "skip_report.json", report);

    if (result.considered > 0 &&
        static_cast<double>(failures) > options.max_skip_fraction * static_cast<double>(result.considered)) {
        std::string msg = std::to_string(failures) + " of " + std::to_string(result.considered) +
                          " items could not be used (limit " + std::to_string(options.max_skip_fraction * 100.0) +
                          "%):";
        int shown = 0;
        for (const auto& s : result.skipped) {
            if (shown++ == 10) {
                msg += "\n  ... see skip_report.json";
                break;
            }
            msg += "\n  " + s.item + ": " + s.reason;
        }
        throw DataError(msg);
    }
    write_manifest(out_dir / (std::string(kOriTrain) + ".jsonl"), result.ori_train);
    write_manifest(out_dir / (std::string(kSegTrain) + ".jsonl"), result.seg_train);
    write_manifest(out_dir / (std::string(kMaskTrain) + ".jsonl"), result.mask_train);
    write_manifest(out_dir / (std::string(kSegTest) + ".jsonl"), result.seg_test);
    return result;
}

Mask render_ellipse(int height, int width, double cx, double cy, double rx, double ry) {
    Mask m(height, width, 1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dx = (x + 0.5 - cx) / rx;
            const double dy = (y + 0.5 - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) m.at(y, x, 0) = 1.0;
        }
    }
    return m;
}

Mask render_rectangle(int height, int width, int x0, int y0, int x1, int y1) {
    Mask m(height, width, 1);
    for (int y = std::max(0, y0); y < std::min(height, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(width, x1); ++x) m.at(y, x, 0) = 1.0;
    return m;
}

namespace {

struct Shape2d {
    bool ellipse;
    double cx, cy, rx, ry;  // ellipse
    int x0, y0, x1, y1;     // rectangle, half-open
    double color[3];
    double alt[3];
    int texture;  // 0 solid, 1 stripes, 2 checker
    int period;
    Mask full;  // unoccluded footprint
    Mask mask;  // visible part
};

double texture_mix(const Shape2d& s, int y, int x, int c) {
    bool alt = false;
    if (s.texture == 1) alt = (y / s.period) % 2 == 1;
    if (s.texture == 2) alt = ((y / s.period) + (x / s.period)) % 2 == 1;
    return alt ? s.alt[c] : s.color[c];
}

}  // namespace

Manifest synth_generate(const fs::path& out_dir, const SynthOptions& options) {
    if (options.count < 1) throw ConfigError("synthetic corpus needs at least one image");
    if (options.size < 16) throw ConfigError("synthetic images must be at least 16 pixels wide");
    if (options.max_shapes < 1) throw ConfigError("max_shapes must be >= 1");
    const int n = options.size;
    fs::create_directories(out_dir / "images");
    coco::Dataset ds;
    ds.categories = {{1, "ellipse"}, {2, "rectangle"}};
    Manifest manifest{kSynth, {}};
    std::int64_t next_ann = 1;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int i = 0; i < options.count; ++i) {
        Rng rng = make_rng(options.seed, {static_cast<std::uint64_t>(i)});
        auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
        auto uint = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

        std::vector<Shape2d> shapes;
        // Redraw the layout until every instance keeps a reasonable visible part.
        for (int attempt = 0;; ++attempt) {
            shapes.clear();
            const int count = uint(1, options.max_shapes);
            for (int s = 0; s < count; ++s) {
                Shape2d sh{};
                sh.ellipse = unit(rng) < 0.5;
                if (sh.ellipse) {
                    sh.rx = uni(n / 10.0, n / 4.0);
                    sh.ry = uni(n / 10.0, n / 4.0);
                    sh.cx = uni(sh.rx, n - sh.rx);
                    sh.cy = uni(sh.ry, n - sh.ry);
                    sh.mask = render_ellipse(n, n, sh.cx, sh.cy, sh.rx, sh.ry);
                } else {
                    const int w = uint(n / 6, n / 2);
                    const int h = uint(n / 6, n / 2);
                    sh.x0 = uint(0, n - w);
                    sh.y0 = uint(0, n - h);
                    sh.x1 = sh.x0 + w;
                    sh.y1 = sh.y0 + h;
                    sh.mask = render_rectangle(n, n, sh.x0, sh.y0, sh.x1, sh.y1);
                }
                sh.full = sh.mask;
                for (int c = 0; c < 3; ++c) {
                    sh.color[c] = uni(0.0, 1.0);
                    sh.alt[c] = std::clamp(sh.color[c] * 0.5 + uni(0.0, 0.5), 0.0, 1.0);
                }
                sh.texture = uint(0, 2);
                sh.period = uint(2, 6);
                shapes.push_back(std::move(sh));
            }
            // Visible part: pixels not covered by any later shape.
            bool ok = true;
            for (std::size_t s = 0; s < shapes.size(); ++s) {
                const std::size_t full = mask_area(shapes[s].mask);
                Mask visible = shapes[s].mask;
                for (std::size_t t = s + 1; t < shapes.size(); ++t)
                    for (std::size_t p = 0; p < visible.data.size(); ++p)
                        if (shapes[t].mask.data[p] > 0.5) visible.data[p] = 0.0;
                const std::size_t area = mask_area(visible);
                if (area < 8 || area * 10 < full * 3) ok = false;
                shapes[s].mask = std::move(visible);
            }
            if (ok || attempt >= 50) {
                if (!ok) shapes.resize(1);  // a lone shape is fully visible
                if (!ok) shapes[0].mask = shapes[0].full;
                break;
            }
        }

        Image image(n, n, 3);
        double base[3], tilt[3];
        for (int c = 0; c < 3; ++c) {
            base[c] = uni(0.15, 0.85);
            tilt[c] = uni(-0.15, 0.15);
        }
        const double noise = uni(0.02, 0.08);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                for (int c = 0; c < 3; ++c) {
                    const double ramp = tilt[c] * (static_cast<double>(x + y) / (2.0 * n) - 0.5);
                    image.at(y, x, c) = std::clamp(base[c] + ramp + noise * gauss(rng), 0.0, 1.0);
                }
        for (const auto& sh : shapes)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    if (sh.full.at(y, x, 0) < 0.5) continue;
                    for (int c = 0; c < 3; ++c) image.at(y, x, c) = texture_mix(sh, y, x, c);
                }

        char name[64];
        std::snprintf(name, sizeof name, "synth_%05d.png", i);
        const fs::path path = out_dir / "images" / name;
        save_png(path, image);
        const std::int64_t image_id = i + 1;
        ds.images.push_back({image_id, name, n, n});
        manifest.entries.push_back({path, std::nullopt, image_id, -1});

        for (const auto& sh : shapes) {
            coco::Annotation a;
            a.id = next_ann++;
            a.image_id = image_id;
            a.category_id = sh.ellipse ? 1 : 2;
            if (!sh.ellipse && mask_area(sh.mask) == static_cast<std::size_t>((sh.x1 - sh.x0) * (sh.y1 - sh.y0))) {
                a.segmentation = Json::array({Json::array({sh.x0, sh.y0, sh.x1, sh.y0, sh.x1, sh.y1, sh.x0, sh.y1})});
            } else if (sh.ellipse) {
                a.segmentation = {{"size", {n, n}}, {"counts", coco::mask_to_rle(sh.mask).counts}};
            } else {
                a.segmentation = {{"size", {n, n}}, {"counts", coco::rle_to_string(coco::mask_to_rle(sh.mask))}};
            }
            ds.annotations.push_back(std::move(a));
        }
    }
    write_json_file(out_dir / "annotations.json", coco::to_json(ds));
    write_manifest(out_dir / (std::string(kSynth) + ".jsonl"), manifest);
    return manifest;
}

TrainingSet training_set(const Manifest& images) {
    if (images.empty()) throw DataError("manifest '" + images.split + "' is empty");
    TrainingSet set;
    for (const auto& e : images.entries) {
        set.images.push_back(e.image);
        set.masks.push_back(e.mask);
        set.ids.push_back(std::to_string(e.image_id) + (e.annotation_id >= 0 ? "_" + std::to_string(e.annotation_id) : ""));
    }
    return set;
}

TrainingSet training_set(const Manifest& images, const Manifest& masks) {
    if (images.empty()) throw DataError("manifest '" + images.split + "' is empty");
    if (images.size() != masks.size()) {
        throw DataError("manifest alignment error: " + std::to_string(images.size()) + " images but " +
                        std::to_string(masks.size()) + " masks");
    }
    TrainingSet set = training_set(images);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& a = images.entries[i];
        const auto& b = masks.entries[i];
        if (a.image_id != b.image_id || a.annotation_id != b.annotation_id) {
            throw DataError("manifest alignment error at entry " + std::to_string(i) + ": image " +
                            std::to_string(a.image_id) + "/" + std::to_string(a.annotation_id) + " vs mask " +
                            std::to_string(b.image_id) + "/" + std::to_string(b.annotation_id));
        }
        set.masks[i] = b.image;
    }
    return set;
}

BatchStream::BatchStream(const TrainingSet& set, int batch_size, int image_size, std::uint64_t seed)
    : set_(set), batch_size_(batch_size), image_size_(image_size), seed_(seed) {
    if (set_.size() == 0) throw DataError("cannot batch an empty training set");
    if (batch_size_ < 1) throw ConfigError("batch_size must be >= 1");
    if (image_size_ < 1) throw ConfigError("image_size must be >= 1");
}

std::size_t BatchStream::batches_per_epoch() const {
    return (set_.size() + batch_size_ - 1) / static_cast<std::size_t>(batch_size_);
}

std::vector<std::vector<std::size_t>> BatchStream::epoch_order(int epoch) const {
    std::vector<std::size_t> order(set_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = make_rng(seed_, {0x5b, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size_) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size_)));
    }
    return batches;
}

Batch BatchStream::load(const std::vector<std::size_t>& indices, int epoch) const {
    const int s = image_size_;
    Batch b;
    b.images = Tensor(Shape{static_cast<int>(indices.size()), 3, s, s});
    b.masks = Tensor(Shape{static_cast<int>(indices.size()), 1, s, s});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        const Image image = load_image(set_.images[i], 3);
        Mask mask;
        if (set_.masks[i]) {
            mask = load_image(*set_.masks[i], 1);
            if (!mask.same_geometry(image)) {
                throw DataError("mask " + set_.masks[i]->string() + " does not match " + set_.images[i].string());
            }
        } else {
            mask = Mask(image.height, image.width, 1, 1.0);
        }
        Rng rng = make_rng(seed_, {0xc0, static_cast<std::uint64_t>(epoch), i});
        const CropResult r = crop_or_pad(image, &mask, s, rng);
        const Tensor ti = to_tensor(r.image);
        const Tensor tm = to_tensor(r.mask);
        std::copy(ti.data(), ti.data() + ti.size(), b.images.sample(static_cast<int>(k)));
        std::copy(tm.data(), tm.data() + tm.size(), b.masks.sample(static_cast<int>(k)));
        b.ids.push_back(set_.ids[i]);
    }
    return b;
}

}  // namespace uidsc::data

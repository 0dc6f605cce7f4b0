#include "uidsc/coco.hpp"

#include <algorithm>
#include <cmath>

#include "uidsc/errors.hpp"

namespace uidsc::coco {

void Dataset::index() {
    image_index_.clear();
    name_index_.clear();
    by_image_.clear();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!image_index_.emplace(images[i].id, i).second) {
            throw DataError("duplicate image id " + std::to_string(images[i].id));
        }
        name_index_.emplace(images[i].file_name, i);
    }
    for (std::size_t i = 0; i < annotations.size(); ++i) by_image_[annotations[i].image_id].push_back(i);
    for (auto& [id, list] : by_image_) {
        std::sort(list.begin(), list.end(),
                  [&](std::size_t a, std::size_t b) { return annotations[a].id < annotations[b].id; });
    }
}

const ImageInfo* Dataset::find_image(std::int64_t id) const {
    auto it = image_index_.find(id);
    return it == image_index_.end() ? nullptr : &images[it->second];
}

const ImageInfo* Dataset::find_image_by_name(const std::string& file_name) const {
    auto it = name_index_.find(file_name);
    return it == name_index_.end() ? nullptr : &images[it->second];
}

const Category* Dataset::find_category(std::int64_t id) const {
    for (const auto& c : categories)
        if (c.id == id) return &c;
    return nullptr;
}

const Category* Dataset::find_category(const std::string& name) const {
    for (const auto& c : categories)
        if (c.name == name) return &c;
    return nullptr;
}

std::vector<const Annotation*> Dataset::annotations_for(std::int64_t image_id) const {
    std::vector<const Annotation*> out;
    auto it = by_image_.find(image_id);
    if (it == by_image_.end()) return out;
    for (std::size_t i : it->second) out.push_back(&annotations[i]);
    return out;
}

namespace {

const Json& require_array(const Json& root, const char* key) {
    if (!root.is_object() || !root.contains(key) || !root.at(key).is_array()) {
        throw DataError(std::string("annotation file lacks a '") + key + "' array");
    }
    return root.at(key);
}

}  // namespace

Dataset parse(const Json& root) {
    Dataset d;
    try {
        for (const auto& j : require_array(root, "images")) {
            d.images.push_back({j.at("id").get<std::int64_t>(), j.at("file_name").get<std::string>(),
                                j.at("height").get<int>(), j.at("width").get<int>()});
        }
        for (const auto& j : require_array(root, "categories")) {
            d.categories.push_back({j.at("id").get<std::int64_t>(), j.at("name").get<std::string>()});
        }
        for (const auto& j : require_array(root, "annotations")) {
            Annotation a;
            a.id = j.at("id").get<std::int64_t>();
            a.image_id = j.at("image_id").get<std::int64_t>();
            a.category_id = j.at("category_id").get<std::int64_t>();
            a.iscrowd = j.value("iscrowd", 0) != 0;
            a.segmentation = j.value("segmentation", Json());
            d.annotations.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed annotation file: ") + e.what());
    }
    d.index();
    return d;
}

Dataset load(const std::filesystem::path& path) {
    Json root;
    try {
        root = Json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse annotation file " + path.string() + ": " + e.what());
    }
    return parse(root);
}

Json to_json(const Dataset& d) {
    Json images = Json::array(), anns = Json::array(), cats = Json::array();
    for (const auto& i : d.images) {
        images.push_back({{"id", i.id}, {"file_name", i.file_name}, {"height", i.height}, {"width", i.width}});
    }
    for (const auto& c : d.categories) cats.push_back({{"id", c.id}, {"name", c.name}});
    for (const auto& a : d.annotations) {
        anns.push_back({{"id", a.id},
                        {"image_id", a.image_id},
                        {"category_id", a.category_id},
                        {"iscrowd", a.iscrowd ? 1 : 0},
                        {"segmentation", a.segmentation}});
    }
    return {{"images", images}, {"annotations", anns}, {"categories", cats}};
}

Mask rasterize_polygons(const std::vector<std::vector<double>>& polygons, int height, int width) {
    Mask mask(height, width, 1);
    std::vector<double> xs;
    for (const auto& poly : polygons) {
        if (poly.size() < 6 || poly.size() % 2 != 0) {
            throw DataError("polygon needs at least 3 vertices, got " + std::to_string(poly.size()) + " coordinates");
        }
        const std::size_t nv = poly.size() / 2;
        for (int y = 0; y < height; ++y) {
            const double yc = y + 0.5;
            xs.clear();
            for (std::size_t i = 0; i < nv; ++i) {
                const double x1 = poly[2 * i], y1 = poly[2 * i + 1];
                const double x2 = poly[2 * ((i + 1) % nv)], y2 = poly[2 * ((i + 1) % nv) + 1];
                if ((y1 <= yc) != (y2 <= yc)) xs.push_back(x1 + (yc - y1) * (x2 - x1) / (y2 - y1));
            }
            std::sort(xs.begin(), xs.end());
            for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
                const int first = std::max(0, static_cast<int>(std::ceil(xs[i] - 0.5)));
                const int last = std::min(width, static_cast<int>(std::ceil(xs[i + 1] - 0.5)));
                for (int x = first; x < last; ++x) mask.at(y, x, 0) = 1.0;
            }
        }
    }
    return mask;
}

Mask rle_to_mask(const Rle& rle) {
    Mask mask(rle.height, rle.width, 1);
    const std::size_t total = static_cast<std::size_t>(rle.height) * rle.width;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < rle.counts.size(); ++i) {
        if (pos + rle.counts[i] > total) throw DataError("RLE counts exceed the image size");
        if (i % 2 == 1) {
            for (std::size_t p = pos; p < pos + rle.counts[i]; ++p) {
                const int x = static_cast<int>(p / rle.height);
                const int y = static_cast<int>(p % rle.height);
                mask.at(y, x, 0) = 1.0;
            }
        }
        pos += rle.counts[i];
    }
    if (pos != total) throw DataError("RLE counts cover " + std::to_string(pos) + " of " + std::to_string(total) + " pixels");
    return mask;
}

Rle mask_to_rle(const Mask& mask) {
    Rle rle{mask.height, mask.width, {}};
    bool current = false;
    std::uint32_t run = 0;
    for (int x = 0; x < mask.width; ++x) {
        for (int y = 0; y < mask.height; ++y) {
            const bool v = mask.at(y, x, 0) >= 0.5;
            if (v != current) {
                rle.counts.push_back(run);
                run = 0;
                current = v;
            }
            ++run;
        }
    }
    rle.counts.push_back(run);
    return rle;
}

std::string rle_to_string(const Rle& rle) {
    std::string s;
    for (std::size_t i = 0; i < rle.counts.size(); ++i) {
        long long x = rle.counts[i];
        if (i > 2) x -= static_cast<long long>(rle.counts[i - 2]);
        bool more = true;
        while (more) {
            char c = static_cast<char>(x & 0x1f);
            x >>= 5;
            more = (c & 0x10) ? x != -1 : x != 0;
            if (more) c |= 0x20;
            s.push_back(static_cast<char>(c + 48));
        }
    }
    return s;
}

Rle rle_from_string(const std::string& text, int height, int width) {
    Rle rle{height, width, {}};
    std::size_t p = 0;
    while (p < text.size()) {
        long long x = 0;
        int k = 0;
        bool more = true;
        while (more) {
            if (p >= text.size()) throw DataError("truncated compressed RLE string");
            const int c = text[p] - 48;
            if (c < 0 || c > 63) throw DataError("invalid character in compressed RLE string");
            x |= static_cast<long long>(c & 0x1f) << (5 * k);
            more = (c & 0x20) != 0;
            ++p;
            ++k;
            if (!more && (c & 0x10)) x |= -1LL << (5 * k);
        }
        const std::size_t m = rle.counts.size();
        if (m > 2) x += static_cast<long long>(rle.counts[m - 2]);
        if (x < 0) throw DataError("negative run in compressed RLE string");
        rle.counts.push_back(static_cast<std::uint32_t>(x));
    }
    return rle;
}

Mask rasterize(const Json& seg, int height, int width) {
    try {
        if (seg.is_array()) {
            return rasterize_polygons(seg.get<std::vector<std::vector<double>>>(), height, width);
        }
        if (seg.is_object() && seg.contains("counts") && seg.contains("size")) {
            const auto size = seg.at("size").get<std::vector<int>>();
            if (size.size() != 2 || size[0] != height || size[1] != width) {
                throw DataError("RLE size does not match the image (" + std::to_string(height) + "x" +
                                std::to_string(width) + ")");
            }
            const Json& counts = seg.at("counts");
            Rle rle = counts.is_string() ? rle_from_string(counts.get<std::string>(), height, width)
                                         : Rle{height, width, counts.get<std::vector<std::uint32_t>>()};
            return rle_to_mask(rle);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed segmentation: ") + e.what());
    }
    throw DataError("unsupported segmentation encoding");
}

}  // namespace uidsc::coco

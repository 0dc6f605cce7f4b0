#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "uidsc/coco.hpp"
#include "uidsc/errors.hpp"

using namespace uidsc;
using namespace uidsc::coco;

namespace {

// Ray casting at pixel centres, written independently of the scanline filler.
bool inside(const std::vector<double>& poly, double px, double py) {
    bool in = false;
    const std::size_t n = poly.size() / 2;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = poly[2 * i], yi = poly[2 * i + 1], xj = poly[2 * j], yj = poly[2 * j + 1];
        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) in = !in;
    }
    return in;
}

Mask polygon_oracle(const std::vector<std::vector<double>>& polys, int h, int w) {
    Mask m(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (const auto& p : polys)
                if (inside(p, x + 0.5, y + 0.5)) m.at(y, x, 0) = 1.0;
    return m;
}

}  // namespace

TEST_CASE("polygon rasterization against ray casting") {
    const std::vector<std::vector<double>> cases[] = {
        {{2.3, 1.1, 17.8, 4.2, 9.1, 15.7}},
        {{1, 1, 18, 1, 18, 18, 10, 6, 1, 18}},                 // concave
        {{3, 3, 10, 3, 10, 10, 3, 10}, {8, 8, 16, 8, 16, 16}},  // overlapping pair
        {{0, 0, 20, 0, 20, 20, 0, 20}},
        {{5.5, 2.5, 14.5, 2.5, 14.5, 2.5}},                    // degenerate
    };
    for (const auto& polys : cases) {
        const Mask m = rasterize_polygons(polys, 20, 20);
        CHECK(m == polygon_oracle(polys, 20, 20));
    }
    CHECK(mask_area(rasterize_polygons({{0, 0, 20, 0, 20, 20, 0, 20}}, 20, 20)) == 400);
    CHECK(mask_area(rasterize_polygons({{2, 2, 6, 2, 6, 5, 2, 5}}, 10, 10)) == 12);

    Rng rng(3);
    std::uniform_real_distribution<double> u(-2.0, 26.0);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> p;
        for (int k = 0; k < 2 * (3 + t % 6); ++k) p.push_back(u(rng));
        CHECK(rasterize_polygons({p}, 24, 24) == polygon_oracle({p}, 24, 24));
    }
}

TEST_CASE("run-length encoding") {
    Mask m(3, 2, 1);
    m.at(1, 0, 0) = m.at(2, 0, 0) = m.at(0, 1, 0) = 1.0;
    // Column-major: 0 1 1 | 1 0 0
    const Rle r = mask_to_rle(m);
    CHECK(r.counts == std::vector<std::uint32_t>{1, 3, 2});
    CHECK(rle_to_mask(r) == m);
    Mask ones(2, 2, 1, 1.0);
    CHECK(mask_to_rle(ones).counts == std::vector<std::uint32_t>{0, 4});

    for (std::uint64_t s = 0; s < 20; ++s) {
        Mask rnd = testing::random_image(13, 17, 1, s);
        for (double& v : rnd.data) v = v > 0.6 ? 1.0 : 0.0;
        const Rle e = mask_to_rle(rnd);
        CHECK(rle_to_mask(e) == rnd);
        const Rle back = rle_from_string(rle_to_string(e), 13, 17);
        CHECK(back.counts == e.counts);
    }
}

TEST_CASE("compressed counts strings") {
    auto enc = [](std::vector<std::uint32_t> c) {
        std::uint32_t total = 0;
        for (auto v : c) total += v;
        return rle_to_string(Rle{static_cast<int>(total), 1, c});
    };
    // Hand-derived from the 5-bit little-endian, sign-aware character scheme.
    CHECK(enc({3}) == "3");
    CHECK(enc({0, 4}) == "04");
    CHECK(enc({2, 3, 5, 7}) == "2354");
    CHECK(enc({1, 10, 1, 2}) == "1:1H");
    CHECK(enc({100}) == "T3");
    CHECK(rle_from_string("1:1H", 14, 1).counts == std::vector<std::uint32_t>{1, 10, 1, 2});
    CHECK_THROWS_AS(rle_to_mask(rle_from_string("1:1H", 15, 1)), DataError);
    CHECK_THROWS_AS(rle_from_string("1:1\x7f", 14, 1), DataError);
}

TEST_CASE("segmentation variants") {
    const Mask poly = rasterize(Json::parse(R"([[1,1,7,1,7,5,1,5]])"), 8, 8);
    CHECK(mask_area(poly) == 24);
    const Rle r = mask_to_rle(poly);
    Json unc{{"size", {8, 8}}, {"counts", r.counts}};
    CHECK(rasterize(unc, 8, 8) == poly);
    Json comp{{"size", {8, 8}}, {"counts", rle_to_string(r)}};
    CHECK(rasterize(comp, 8, 8) == poly);
    CHECK_THROWS_AS(rasterize(comp, 8, 9), DataError);
    CHECK_THROWS_AS(rasterize(Json("nope"), 8, 8), DataError);
    CHECK_THROWS_AS(rasterize(Json::parse(R"([[1,1,7]])"), 8, 8), DataError);
    Json short_counts{{"size", {8, 8}}, {"counts", {3, 4}}};
    CHECK_THROWS_AS(rasterize(short_counts, 8, 8), DataError);
}

TEST_CASE("dataset parsing and lookup") {
    const Json root = Json::parse(R"({
      "images": [{"id": 7, "file_name": "a.png", "height": 10, "width": 12}],
      "categories": [{"id": 1, "name": "cat"}, {"id": 2, "name": "dog"}],
      "annotations": [
        {"id": 5, "image_id": 7, "category_id": 2, "iscrowd": 0, "segmentation": [[0,0,4,0,4,4]]},
        {"id": 3, "image_id": 7, "category_id": 1, "iscrowd": 1, "segmentation": {"size": [10,12], "counts": [120]}}
      ]})");
    const Dataset d = parse(root);
    REQUIRE(d.find_image(7));
    CHECK(d.find_image(7)->file_name == "a.png");
    CHECK(d.find_image_by_name("a.png")->id == 7);
    CHECK(d.find_category("dog")->id == 2);
    CHECK(d.find_category(1)->name == "cat");
    CHECK(d.find_image(8) == nullptr);
    const auto anns = d.annotations_for(7);
    REQUIRE(anns.size() == 2);
    CHECK(anns[0]->id == 3);
    CHECK(anns[0]->iscrowd);
    CHECK(to_json(parse(to_json(d))) == to_json(d));

    CHECK_THROWS_AS(parse(Json::parse(R"({"images": 3})")), DataError);
    CHECK_THROWS_AS(parse(Json::parse(R"({"images": [], "annotations": []})")), DataError);
    CHECK_THROWS_AS(parse(Json::parse(R"({"images": [{"id": "x"}], "annotations": [], "categories": []})")),
                    DataError);
    testing::TempDir dir("coco");
    CHECK_THROWS_AS(load(dir / "missing.json"), DataError);
}

#include "instgs/codebook.hpp"
#include "instgs/image_io.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

using namespace instgs;
using namespace instgs::testing;

TEST_CASE("codeword bit convention") {
    const Codebook cb(3);
    CHECK(cb.size() == 8);
    CHECK(cb.codeword(0) == Eigen::Vector3d(-1, -1, -1));
    CHECK(cb.codeword(7) == Eigen::Vector3d(1, 1, 1));
    CHECK(cb.codeword(5) == Eigen::Vector3d(1, -1, 1));
    CHECK_THROWS_AS((void)cb.codeword(8), std::domain_error);
    CHECK_THROWS_AS((void)cb.codeword(-1), std::domain_error);
    CHECK_THROWS_AS(Codebook(0), std::invalid_argument);
    CHECK_THROWS_AS(Codebook(17), std::invalid_argument);
}

TEST_CASE("codewords are distinct with squared distance a multiple of 4") {
    const Codebook cb(4);
    for (int a = 0; a < 16; ++a) {
        for (int b = a + 1; b < 16; ++b) {
            const double d2 = (cb.codeword(a) - cb.codeword(b)).squaredNorm();
            CHECK(d2 > 0.0);
            CHECK(std::fmod(d2, 4.0) == 0.0);
        }
    }
}

TEST_CASE("quantize follows signs with zero resolving to -1") {
    const Codebook cb(8);
    CHECK(cb.quantize(Eigen::VectorXd::Constant(8, 0.3)) == 255);
    CHECK(cb.quantize(Eigen::VectorXd::Zero(8)) == 0);
    Eigen::VectorXd f = Eigen::VectorXd::Constant(8, -2.0);
    f[1] = 5.0;
    f[3] = 1e-300;
    CHECK(cb.quantize(f) == 0b1010);
    f[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS((void)cb.quantize(f), std::domain_error);
    CHECK_THROWS_AS((void)cb.quantize(Eigen::VectorXd::Zero(3)), std::domain_error);
}

TEST_CASE("quantize equals brute-force argmin over tanh features") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.5);
    for (int d : {3, 8}) {
        const Codebook cb(d);
        for (int trial = 0; trial < 2000; ++trial) {
            Eigen::VectorXd f(d);
            for (int k = 0; k < d; ++k) f[k] = n(rng);
            const Eigen::VectorXd t = f.array().tanh();
            std::int64_t best = 0;
            double best_d = 1e300;
            for (std::int64_t id = 0; id < cb.size(); ++id) {
                const double dist = (t - cb.codeword(id)).squaredNorm();
                if (dist < best_d) {
                    best_d = dist;
                    best = id;
                }
            }
            CHECK(cb.quantize(f) == best);
        }
    }
}

TEST_CASE("quantize_image masks low-alpha pixels") {
    const Codebook cb(2);
    FeatureImage f(2, 1, 2, 1.0);
    Image<double> alpha(2, 1, 1, 1.0);
    alpha.at(1, 0) = 0.49;
    const IdMap ids = quantize_image(cb, f, alpha);
    CHECK(ids.at(0, 0) == 3);
    CHECK(ids.at(1, 0) == kBackground);
    CHECK_THROWS_AS((void)quantize_image(Codebook(3), f, alpha), std::invalid_argument);
}

TEST_CASE("palette is a bijection with black background") {
    for (int d : {1, 3, 8}) {
        const InstancePalette p(d);
        std::set<Rgb8> seen;
        CHECK(p.id_to_color(kBackground) == Rgb8{0, 0, 0});
        CHECK(p.color_to_id({0, 0, 0}) == kBackground);
        seen.insert(p.id_to_color(kBackground));
        for (std::int32_t id = 0; id < (1 << d); ++id) {
            const Rgb8 c = p.id_to_color(id);
            CHECK(seen.insert(c).second);
            CHECK(p.color_to_id(c) == id);
        }
        CHECK_THROWS_AS((void)p.id_to_color(1 << d), std::domain_error);
    }
    const InstancePalette p(8);
    // Every channel fully set decodes to k = 2^24 - 1, far outside the table.
    CHECK_FALSE(p.color_to_id({255, 255, 255}).has_value());
    CHECK_FALSE(p.color_to_id({1, 0, 0}).has_value());
}

TEST_CASE("palette JSON lists background first then every id") {
    const InstancePalette p(8);
    const nlohmann::json j = p.to_json();
    REQUIRE(j.size() == 257);
    CHECK(j[0]["id"].is_null());
    CHECK(j[0]["rgb"] == nlohmann::json::array({0, 0, 0}));
    for (int id = 0; id < 256; ++id) {
        const Rgb8 c = p.id_to_color(id);
        CHECK(j[id + 1]["id"] == id);
        CHECK(j[id + 1]["rgb"] == nlohmann::json::array({c[0], c[1], c[2]}));
    }
}

TEST_CASE("PNG encode/decode round trip and palette inversion") {
    std::mt19937_64 rng(12);
    Rgb8Image img(7, 5, 3);
    std::uniform_int_distribution<int> byte(0, 255);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(byte(rng));
    const Rgb8Image back = decode_png(encode_png(img));
    CHECK(back == img);
    CHECK(encode_png(img) == encode_png(back));
    CHECK_THROWS_AS((void)decode_png("not a png"), ImageIoError);

    const InstancePalette pal(4);
    IdMap ids(6, 4, 1, kBackground);
    std::uniform_int_distribution<int> id(-1, 15);
    for (auto& v : ids.data) v = id(rng);
    CHECK(palette_to_ids(decode_png(encode_png(colorize_ids(ids, pal))), pal) == ids);
}

TEST_CASE("to_rgb8 clamps and rounds") {
    ColorImage c(2, 1, 3);
    c.data = {-0.1, 0.5, 1.2, 0.999, 0.001, 0.502};
    const Rgb8Image r = to_rgb8(c);
    CHECK(r.data == std::vector<std::uint8_t>{0, 128, 255, 255, 0, 128});
}

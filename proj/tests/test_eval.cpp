#include "instgs/eval.hpp"
#include "instgs/synthdata.hpp"

#include "oracles.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace instgs;
using namespace instgs::testing;

namespace {

IdMap random_map(std::mt19937_64& rng, int w, int h, int labels, double bg = 0.2) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> l(0, labels - 1);
    IdMap m(w, h, 1, kBackground);
    for (auto& v : m.data) v = u(rng) < bg ? kBackground : l(rng);
    return m;
}

IdMap relabel(const IdMap& m, const std::vector<std::int32_t>& perm) {
    IdMap out = m;
    for (auto& v : out.data)
        if (v != kBackground) v = perm[v];
    return out;
}

IdMap from_rows(int w, int h, std::vector<std::int32_t> values) {
    IdMap m(w, h, 1);
    m.data = std::move(values);
    return m;
}

constexpr std::int32_t B = kBackground;

}  // namespace

TEST_CASE("matching recovers a relabeling bijection") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<IdMap> gt = {random_map(rng, 8, 8, 5), random_map(rng, 8, 8, 5)};
        std::vector<std::int32_t> perm(5);
        std::iota(perm.begin(), perm.end(), 100);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<IdMap> pred = {relabel(gt[0], perm), relabel(gt[1], perm)};
        const Matching m = match_ids(pred, gt);
        for (const auto& [g, p] : m.gt_to_pred) {
            REQUIRE(p.has_value());
            CHECK(*p == perm[g]);
        }
        CHECK(m.total_iou == doctest::Approx(static_cast<double>(m.gt_to_pred.size())));
        const SegmentationScores s = compute_miou_macc(pred, gt, m);
        CHECK(s.miou == doctest::Approx(1.0));
        CHECK(s.macc == doctest::Approx(1.0));
    }
}

TEST_CASE("half-overlapping masks have IoU 2/6") {
    const std::vector<IdMap> gt = {from_rows(6, 1, {1, 1, 1, 1, B, B})};
    const std::vector<IdMap> pred = {from_rows(6, 1, {B, B, 7, 7, 7, 7})};
    const OverlapCounts c = count_overlaps(pred, gt);
    CHECK(c.iou(0, 0) == doctest::Approx(2.0 / 6.0));
    const Matching m = match_ids(pred, gt);
    CHECK(m.gt_to_pred.at(1) == 7);
    const SegmentationScores s = compute_miou_macc(pred, gt, m);
    CHECK(s.miou == doctest::Approx(2.0 / 6.0));
    CHECK(s.macc == doctest::Approx(0.5));
}

TEST_CASE("matching equals exhaustive assignment on small maps") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> nl(1, 4);
        const std::vector<IdMap> gt = {random_map(rng, 6, 6, nl(rng))};
        const std::vector<IdMap> pred = {random_map(rng, 6, 6, nl(rng), 0.3)};
        const Matching m = match_ids(pred, gt);
        CHECK(m.total_iou == doctest::Approx(oracle::best_total_iou(pred, gt)));
        // The reported total is the total of the reported pairs.
        double sum = 0.0;
        for (const auto& [g, p] : m.gt_to_pred)
            if (p) sum += oracle::iou(pred, gt, g, *p);
        CHECK(sum == doctest::Approx(m.total_iou));

        const SegmentationScores s = compute_miou_macc(pred, gt, m);
        const oracle::Scores o = oracle::scores(pred, gt, m.gt_to_pred);
        CHECK(s.miou == doctest::Approx(o.miou));
        CHECK(s.macc == doctest::Approx(o.macc));
    }
}

TEST_CASE("hungarian on a known cost matrix") {
    Eigen::MatrixXd cost(3, 4);
    cost << 4, 1, 3, 9,
            2, 0, 5, 9,
            3, 2, 2, 9;
    CHECK(hungarian_min_cost(cost) == std::vector<int>{1, 0, 2});
    CHECK(hungarian_min_cost(Eigen::MatrixXd(0, 3)).empty());
}

TEST_CASE("perfect and all-background predictions") {
    std::mt19937_64 rng(43);
    const std::vector<IdMap> gt = {random_map(rng, 6, 6, 3), random_map(rng, 6, 6, 3)};
    const SegmentationScores perfect = compute_miou_macc(gt, gt, match_ids(gt, gt));
    CHECK(perfect.miou == 1.0);
    CHECK(perfect.macc == 1.0);

    const std::vector<IdMap> empty = {IdMap(6, 6, 1, B), IdMap(6, 6, 1, B)};
    const Matching m = match_ids(empty, gt);
    for (const auto& [g, p] : m.gt_to_pred) CHECK_FALSE(p.has_value());
    const SegmentationScores none = compute_miou_macc(empty, gt, m);
    CHECK(none.miou == 0.0);
    CHECK(none.macc == 0.0);
    CHECK(cross_view_consistency(empty, gt) == 0.0);

    const SegmentationScores no_labels = compute_miou_macc(gt, empty, match_ids(gt, empty));
    CHECK(no_labels.miou == 0.0);
    CHECK(no_labels.per_label.empty());
}

TEST_CASE("misaligned inputs are rejected") {
    const std::vector<IdMap> a = {IdMap(4, 4, 1, B)};
    CHECK_THROWS_AS((void)count_overlaps(a, {IdMap(4, 3, 1, B)}), std::invalid_argument);
    CHECK_THROWS_AS((void)count_overlaps(a, {}), std::invalid_argument);
}

TEST_CASE("3D purity") {
    const Codebook cb(3);
    Scene s;
    s.feature_dim = 3;
    auto add = [&](std::int32_t id) {
        Gaussian g;
        g.feature = cb.codeword(id);
        s.gaussians.push_back(g);
    };
    SUBCASE("codewords grouped by label give 1") {
        for (int i = 0; i < 4; ++i) add(2);
        for (int i = 0; i < 3; ++i) add(5);
        CHECK(purity_3d(s, {1, 1, 1, 1, 0, 0, 0}, cb) == 1.0);
    }
    SUBCASE("two equal labels merged into one id give 0.5") {
        for (int i = 0; i < 6; ++i) add(4);
        CHECK(purity_3d(s, {1, 1, 1, 2, 2, 2}, cb) == 0.5);
    }
    SUBCASE("empty scene") { CHECK(purity_3d(s, {}, cb) == 0.0); }
    CHECK_THROWS_AS((void)purity_3d(s, {1, 2, 3, 4, 5, 6, 7, 8, 9}, cb), std::invalid_argument);

    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> label(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
        Scene r;
        r.feature_dim = 3;
        std::vector<std::int32_t> labels, ids;
        for (int i = 0; i < 40; ++i) {
            Gaussian g;
            g.feature = Eigen::Vector3d(u(rng), u(rng), u(rng));
            r.gaussians.push_back(g);
            labels.push_back(label(rng));
            ids.push_back(oracle::nearest_codeword(g.feature));
        }
        CHECK(purity_3d(r, labels, cb) == doctest::Approx(oracle::purity(ids, labels)));
    }
}

TEST_CASE("cross-view consistency") {
    SUBCASE("one id per instance everywhere") {
        const std::vector<IdMap> gt = {from_rows(4, 1, {1, 1, 2, B}), from_rows(4, 1, {2, 1, B, 1})};
        const std::vector<IdMap> pred = {from_rows(4, 1, {5, 5, 3, B}), from_rows(4, 1, {3, 5, 3, 5})};
        CHECK(cross_view_consistency(pred, gt) == 1.0);
    }
    SUBCASE("an instance split 50/50 across two views") {
        const std::vector<IdMap> gt = {from_rows(2, 1, {1, 1}), from_rows(2, 1, {1, 1})};
        const std::vector<IdMap> pred = {from_rows(2, 1, {4, 4}), from_rows(2, 1, {6, 6})};
        CHECK(cross_view_consistency(pred, gt) == 0.5);
    }
    SUBCASE("background predictions count against the instance") {
        const std::vector<IdMap> gt = {from_rows(2, 1, {1, 1}), from_rows(2, 1, {1, 1})};
        const std::vector<IdMap> pred = {from_rows(2, 1, {B, B}), from_rows(2, 1, {B, 6})};
        CHECK(cross_view_consistency(pred, gt) == 0.25);
    }
    CHECK_THROWS_AS((void)cross_view_consistency({IdMap(2, 2, 1, 0)}, {IdMap(2, 2, 1, 0)}),
                    std::invalid_argument);

    std::mt19937_64 rng(45);
    for (int trial = 0; trial < 30; ++trial) {
        const std::vector<IdMap> gt = {random_map(rng, 7, 5, 4), random_map(rng, 7, 5, 4), random_map(rng, 7, 5, 4)};
        const std::vector<IdMap> pred = {random_map(rng, 7, 5, 5), random_map(rng, 7, 5, 5), random_map(rng, 7, 5, 5)};
        CHECK(cross_view_consistency(pred, gt) == doctest::Approx(oracle::consistency(pred, gt)));
    }
}

TEST_CASE("metrics are invariant to relabeling the prediction") {
    std::mt19937_64 rng(46);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<IdMap> gt = {random_map(rng, 8, 8, 4), random_map(rng, 8, 8, 4)};
        const std::vector<IdMap> pred = {random_map(rng, 8, 8, 5), random_map(rng, 8, 8, 5)};
        std::vector<std::int32_t> perm(5);
        std::iota(perm.begin(), perm.end(), 20);
        std::shuffle(perm.begin(), perm.end(), rng);
        const std::vector<IdMap> moved = {relabel(pred[0], perm), relabel(pred[1], perm)};
        const SegmentationScores a = compute_miou_macc(pred, gt, match_ids(pred, gt));
        const SegmentationScores b = compute_miou_macc(moved, gt, match_ids(moved, gt));
        CHECK(a.miou == doctest::Approx(b.miou));
        CHECK(a.macc == doctest::Approx(b.macc));
        CHECK(cross_view_consistency(pred, gt) == doctest::Approx(cross_view_consistency(moved, gt)));
    }
}

TEST_CASE("evaluate on a label-codeword scene is perfect") {
    SceneSpec spec;
    spec.object_count = 3;
    spec.gaussians_per_object = 60;
    spec.ground_resolution = 10;
    spec.extent = 2.0;
    spec.views = 8;
    spec.width = 32;
    spec.height = 32;
    spec.feature_dim = 4;
    const GroundTruthScene g = generate_scene(spec);
    EvalData data;
    for (std::size_t v : {3u, 7u}) {
        data.indices.push_back(v);
        data.cameras.push_back(g.cameras[v]);
        data.gt_maps.push_back(g.gt_instance_maps[v]);
    }
    data.gt_labels = g.gt_label;
    const EvalReport r = evaluate(with_label_codewords(g.scene, g.gt_label), data);
    CHECK(r.miou == 1.0);
    CHECK(r.macc == 1.0);
    CHECK(r.purity_3d == 1.0);
    CHECK(r.consistency == 1.0);
    CHECK(r.views_evaluated == 2);

    const nlohmann::json j = r.to_json();
    for (const char* key : {"miou", "macc", "per_instance_iou", "matching", "purity_3d", "cross_view_consistency",
                            "views_evaluated"})
        CHECK(j.contains(key));
    CHECK(j["matching"]["1"] == 1);
    CHECK(r.table().find("mIoU") != std::string::npos);

    // Raw initialization features collapse everything onto few ids.
    const EvalReport raw = evaluate(g.scene, data);
    CHECK(raw.miou < 1.0);
}

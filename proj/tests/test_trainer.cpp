#include "instgs/synthdata.hpp"
#include "instgs/trainer.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace instgs;
using namespace instgs::testing;

namespace {

struct TinyProblem {
    Scene init;
    std::vector<TrainingView> views;
};

TinyProblem tiny_problem() {
    SceneSpec spec;
    spec.object_count = 2;
    spec.gaussians_per_object = 30;
    spec.ground = false;
    spec.extent = 1.5;
    spec.views = 4;
    spec.width = 24;
    spec.height = 24;
    spec.feature_dim = 3;
    spec.seed = 5;
    const GroundTruthScene g = generate_scene(spec);
    TinyProblem p{training_initialization(g), {}};
    for (std::size_t v = 0; v < g.cameras.size(); ++v) {
        p.views.push_back({v, g.cameras[v], render(g.scene, g.cameras[v]).color, generate_masks(g, v, 3)});
    }
    return p;
}

TrainConfig quiet(int iterations) {
    TrainConfig cfg;
    cfg.iterations = iterations;
    cfg.log_every = 0;
    return cfg;
}

}  // namespace

TEST_CASE("zero iterations returns the input unchanged") {
    const TinyProblem p = tiny_problem();
    const TrainResult r = train(p.init, p.views, quiet(0));
    CHECK(encode_scene(r.scene) == encode_scene(p.init));
    CHECK(r.report.curve.empty());
}

TEST_CASE("training is deterministic for a fixed seed") {
    const TinyProblem p = tiny_problem();
    TrainConfig cfg = quiet(12);
    cfg.stage2_start = 6;
    const TrainResult a = train(p.init, p.views, cfg);
    const TrainResult b = train(p.init, p.views, cfg);
    CHECK(encode_scene(a.scene) == encode_scene(b.scene));
    CHECK(a.report.loss_csv() == b.report.loss_csv());
    cfg.seed = 8;
    const TrainResult c = train(p.init, p.views, cfg);
    CHECK(encode_scene(a.scene) != encode_scene(c.scene));
}

TEST_CASE("schedule: inactive terms and the stage-2 boundary") {
    const TinyProblem p = tiny_problem();
    TrainConfig cfg = quiet(12);
    cfg.stage2_start = 7;
    const TrainResult r = train(p.init, p.views, cfg);
    REQUIRE(r.report.curve.size() == 12);
    for (const LossBreakdown& l : r.report.curve) {
        CHECK(l.voxel.has_value() == (l.iteration % 5 == 0));
        CHECK(l.pseudo.has_value() == (l.iteration >= 7));
        if (l.pseudo) CHECK(std::isfinite(*l.pseudo));
        const double expected = l.photometric + 0.1 * l.contrastive + 0.1 * l.voxel.value_or(0.0) +
                                0.1 * l.pseudo.value_or(0.0);
        CHECK(l.total == doctest::Approx(expected));
    }
    CHECK(r.report.curve[6].iteration == 7);
    CHECK(r.report.curve[6].pseudo.has_value());
    CHECK_FALSE(r.report.curve[5].pseudo.has_value());

    // CSV leaves inactive terms empty.
    const std::string csv = r.report.loss_csv();
    CHECK(csv.rfind("iteration,photo,contra,voxel,pseudo,total\n", 0) == 0);
    CHECK(csv.find("\n1,") != std::string::npos);
    const auto line1 = csv.substr(csv.find("\n1,") + 1, csv.find('\n', csv.find("\n1,") + 1) - csv.find("\n1,") - 1);
    CHECK(line1.find(",,,") != std::string::npos);

    CHECK(voxel_active(cfg, 10));
    CHECK_FALSE(voxel_active(cfg, 11));
    CHECK(pseudo_active(cfg, 7));
    CHECK_FALSE(pseudo_active(cfg, 6));
}

TEST_CASE("scheduled-off terms contribute no gradient") {
    const TinyProblem p = tiny_problem();
    TrainConfig cfg = quiet(30);
    cfg.w_photo = 0.0;
    cfg.w_contra = 0.0;
    cfg.stage2_start = 20;
    const Eigen::Vector3d shift(0.1, 0.2, 0.3);
    // Only voxel and pseudo weights are nonzero: both are off at iteration 1.
    const StepResult off = evaluate_step(p.init, p.views[0], cfg, 1, shift);
    CHECK(off.grads.feature.cwiseAbs().maxCoeff() == 0.0);
    const StepResult voxel = evaluate_step(p.init, p.views[0], cfg, 5, shift);
    CHECK(voxel.grads.feature.cwiseAbs().maxCoeff() > 0.0);
    const StepResult pseudo = evaluate_step(p.init, p.views[0], cfg, 21, shift);
    CHECK(pseudo.grads.feature.cwiseAbs().maxCoeff() > 0.0);
    CHECK(step_losses(p.init, p.views[0], cfg, 21, shift).total == doctest::Approx(pseudo.losses.total));
}

TEST_CASE("zero instance weights never touch features") {
    const TinyProblem p = tiny_problem();
    TrainConfig cfg = quiet(15);
    cfg.w_contra = cfg.w_voxel = cfg.w_pseudo = 0.0;
    cfg.stage2_start = 5;
    const TrainResult r = train(p.init, p.views, cfg);
    bool colors_moved = false;
    for (std::size_t i = 0; i < p.init.size(); ++i) {
        CHECK(r.scene.gaussians[i].feature == p.init.gaussians[i].feature);
        colors_moved |= r.scene.gaussians[i].color != p.init.gaussians[i].color;
        CHECK(r.scene.gaussians[i].position == p.init.gaussians[i].position);
    }
    CHECK(colors_moved);
}

TEST_CASE("learned geometry keeps quaternions normalized and colors in range") {
    const TinyProblem p = tiny_problem();
    TrainConfig cfg = quiet(10);
    cfg.learn_geometry = true;
    const TrainResult r = train(p.init, p.views, cfg);
    bool moved = false;
    for (std::size_t i = 0; i < p.init.size(); ++i) {
        const Gaussian& g = r.scene.gaussians[i];
        CHECK(g.rotation.norm() == doctest::Approx(1.0));
        CHECK(g.color.minCoeff() >= 0.0);
        CHECK(g.color.maxCoeff() <= 1.0);
        moved |= g.position != p.init.gaussians[i].position;
    }
    CHECK(moved);
    CHECK_NOTHROW(validate(r.scene));
}

TEST_CASE("Adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        AdamBlock adam(0.1);
        Eigen::MatrixXd p = Eigen::MatrixXd::Constant(2, 3, 0.5);
        adam.step(p, Eigen::MatrixXd::Zero(2, 3));
        CHECK(p == Eigen::MatrixXd::Constant(2, 3, 0.5));
        CHECK(adam.steps() == 1);
    }
    SUBCASE("first step moves each entry by lr against the gradient sign") {
        AdamBlock adam(0.01);
        Eigen::MatrixXd p = Eigen::MatrixXd::Zero(1, 3);
        Eigen::MatrixXd g(1, 3);
        g << 2.0, -0.5, 1e-3;
        adam.step(p, g);
        CHECK(p(0, 0) == doctest::Approx(-0.01));
        CHECK(p(0, 1) == doctest::Approx(0.01));
        CHECK(p(0, 2) == doctest::Approx(-0.01 * 1e-3 / (1e-3 + 1e-8)));
    }
    SUBCASE("second step matches the bias-corrected recursion") {
        AdamBlock adam(0.1);
        Eigen::MatrixXd p = Eigen::MatrixXd::Zero(1, 1);
        adam.step(p, Eigen::MatrixXd::Constant(1, 1, 1.0));
        adam.step(p, Eigen::MatrixXd::Constant(1, 1, 3.0));
        const double m = (0.9 * 0.1 + 0.1 * 3.0) / (1 - 0.81);
        const double v = (0.999 * 0.001 + 0.001 * 9.0) / (1 - 0.999 * 0.999);
        CHECK(p(0, 0) == doctest::Approx(-0.1 - 0.1 * m / (std::sqrt(v) + 1e-8)));
    }
}

TEST_CASE("non-finite loss names the iteration and term") {
    TinyProblem p = tiny_problem();
    p.views.resize(1);
    p.views[0].image.data[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS((void)train(p.init, p.views, quiet(3)),
                         "non-finite loss at iteration 1 in term 'photometric'", TrainingError);
}

TEST_CASE("parameter packing round trips") {
    std::mt19937_64 rng(3);
    const Scene s = random_fd_scene(rng, small_camera(), 5, 4);
    Scene back = s;
    unpack_parameters(pack_parameters(s), back);
    CHECK(encode_scene(back) == encode_scene(s));
    const SceneGradients packed = pack_parameters(s);
    CHECK(packed.opacity(2, 0) == doctest::Approx(logit(s.gaussians[2].opacity())));
}

TEST_CASE("config validation and JSON") {
    TrainConfig cfg;
    CHECK(cfg.resolved_stage2_start() == 1000);
    CHECK_NOTHROW(cfg.validate());
    cfg.stage2_start = 3001;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.stage2_start = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.w_voxel = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.voxel_interval = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    TrainConfig custom;
    custom.iterations = 77;
    custom.stage2_start = 30;
    custom.w_pseudo = 0.25;
    custom.learn_geometry = true;
    custom.seed = 123456789012345ULL;
    CHECK(config_to_json(config_from_json(config_to_json(custom))) == config_to_json(custom));
    CHECK(config_from_json({{"iterations", 10}}).w_contra == 0.1);
    CHECK_THROWS_AS((void)config_from_json({{"iters", 10}}), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"iterations", "ten"}}), std::invalid_argument);
}

TEST_CASE("training needs a view") {
    const TinyProblem p = tiny_problem();
    CHECK_THROWS_AS((void)train(p.init, {}, quiet(1)), std::invalid_argument);
}

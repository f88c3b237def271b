#include "instgs/trainer.hpp"

#include "instgs/codebook.hpp"
#include "instgs/losses.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace instgs {

int TrainConfig::resolved_stage2_start() const {
    return stage2_start.value_or(std::max(1, iterations / 3));
}

void TrainConfig::validate() const {
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    const int s2 = resolved_stage2_start();
    if (iterations > 0 && (s2 <= 0 || s2 > iterations)) {
        throw std::invalid_argument("stage2_start must be in (0, iterations]");
    }
    for (double w : {w_photo, w_contra, w_voxel, w_pseudo}) {
        if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
    }
    if (voxel_interval < 1) throw std::invalid_argument("voxel_interval must be >= 1");
    if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel_size must be positive");
    for (double lr : {lr_feature, lr_color, lr_opacity, lr_geometry}) {
        if (!(lr >= 0.0)) throw std::invalid_argument("learning rates must be >= 0");
    }
    if (!(grad_clip >= 0.0)) throw std::invalid_argument("grad_clip must be >= 0");
    if (views_per_step < 1) throw std::invalid_argument("views_per_step must be >= 1");
}

nlohmann::json config_to_json(const TrainConfig& c) {
    nlohmann::json j = {
        {"iterations", c.iterations},   {"w_photo", c.w_photo},
        {"w_contra", c.w_contra},       {"w_voxel", c.w_voxel},
        {"w_pseudo", c.w_pseudo},       {"voxel_interval", c.voxel_interval},
        {"voxel_size", c.voxel_size},   {"learn_geometry", c.learn_geometry},
        {"lr_feature", c.lr_feature},   {"lr_color", c.lr_color},
        {"lr_opacity", c.lr_opacity},   {"lr_geometry", c.lr_geometry},
        {"grad_clip", c.grad_clip},     {"seed", c.seed},
        {"views_per_step", c.views_per_step},
        {"log_every", c.log_every},
    };
    j["stage2_start"] = c.stage2_start ? nlohmann::json(*c.stage2_start) : nlohmann::json(nullptr);
    return j;
}

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig c) {
    if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
    const nlohmann::json known = config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw std::invalid_argument("unknown train config key: " + key);
    }
    const auto read = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            throw std::invalid_argument(std::string("train config key has the wrong type: ") + key);
        }
    };
    read("iterations", c.iterations);
    if (j.contains("stage2_start")) {
        if (j.at("stage2_start").is_null()) {
            c.stage2_start.reset();
        } else {
            int s = 0;
            read("stage2_start", s);
            c.stage2_start = s;
        }
    }
    read("w_photo", c.w_photo);
    read("w_contra", c.w_contra);
    read("w_voxel", c.w_voxel);
    read("w_pseudo", c.w_pseudo);
    read("voxel_interval", c.voxel_interval);
    read("voxel_size", c.voxel_size);
    read("learn_geometry", c.learn_geometry);
    read("lr_feature", c.lr_feature);
    read("lr_color", c.lr_color);
    read("lr_opacity", c.lr_opacity);
    read("lr_geometry", c.lr_geometry);
    read("grad_clip", c.grad_clip);
    read("seed", c.seed);
    read("views_per_step", c.views_per_step);
    read("log_every", c.log_every);
    return c;
}

bool voxel_active(const TrainConfig& cfg, int iteration) {
    return iteration % cfg.voxel_interval == 0;
}

bool pseudo_active(const TrainConfig& cfg, int iteration) {
    return iteration >= cfg.resolved_stage2_start();
}

StepResult evaluate_step(const Scene& scene, const TrainingView& view, const TrainConfig& cfg,
                         int iteration, const Eigen::Vector3d& voxel_shift, bool with_gradients) {
    StepResult res;
    res.losses.iteration = iteration;

    const RenderOutput out = render(scene, view.camera);
    const ImageLoss photo = photometric_loss(out.color, view.image);
    const ImageLoss contra = contrastive_loss(out.feature, view.masks);
    res.losses.photometric = photo.value;
    res.losses.contrastive = contra.value;
    res.losses.total = cfg.w_photo * photo.value + cfg.w_contra * contra.value;

    RenderAdjoint adjoint;
    if (with_gradients) {
        adjoint.color = photo.grad;
        for (double& v : adjoint.color.data) v *= cfg.w_photo;
        adjoint.feature = contra.grad;
        for (double& v : adjoint.feature.data) v *= cfg.w_contra;
    }

    if (pseudo_active(cfg, iteration)) {
        const PseudoTarget target = pseudo_labels(out.feature, view.masks, Codebook(scene.feature_dim));
        const ImageLoss pseudo = pseudo_loss(out.feature, target);
        res.losses.pseudo = pseudo.value;
        res.losses.total += cfg.w_pseudo * pseudo.value;
        if (with_gradients) {
            for (std::size_t i = 0; i < pseudo.grad.data.size(); ++i) {
                adjoint.feature.data[i] += cfg.w_pseudo * pseudo.grad.data[i];
            }
        }
    }

    if (with_gradients) {
        res.grads = render_backward(scene, view.camera, adjoint, cfg.learn_geometry);
    }

    if (voxel_active(cfg, iteration) && !scene.empty()) {
        const FeatureLoss vox = voxel_consistency_loss(scene, VoxelPartition{cfg.voxel_size, voxel_shift});
        res.losses.voxel = vox.value;
        res.losses.total += cfg.w_voxel * vox.value;
        if (with_gradients) res.grads.feature += cfg.w_voxel * vox.grad;
    }
    return res;
}

LossBreakdown step_losses(const Scene& scene, const TrainingView& view, const TrainConfig& cfg,
                          int iteration, const Eigen::Vector3d& voxel_shift) {
    return evaluate_step(scene, view, cfg, iteration, voxel_shift, false).losses;
}

SceneGradients pack_parameters(const Scene& scene) {
    SceneGradients p = SceneGradients::zeros(scene.size(), scene.feature_dim);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian& g = scene.gaussians[i];
        const auto r = static_cast<Eigen::Index>(i);
        p.position.row(r) = g.position.transpose();
        p.log_scale.row(r) = g.log_scale.transpose();
        p.rotation.row(r) = g.rotation.transpose();
        p.opacity(r, 0) = g.opacity_logit;
        p.color.row(r) = g.color.transpose();
        p.feature.row(r) = g.feature.transpose();
    }
    return p;
}

void unpack_parameters(const SceneGradients& p, Scene& scene) {
    for (std::size_t i = 0; i < scene.size(); ++i) {
        Gaussian& g = scene.gaussians[i];
        const auto r = static_cast<Eigen::Index>(i);
        g.position = p.position.row(r).transpose();
        g.log_scale = p.log_scale.row(r).transpose();
        g.rotation = p.rotation.row(r).transpose();
        g.opacity_logit = p.opacity(r, 0);
        g.color = p.color.row(r).transpose();
        g.feature = p.feature.row(r).transpose();
    }
}

void AdamBlock::step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    if (m_.rows() != grad.rows() || m_.cols() != grad.cols()) {
        m_ = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
        v_ = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
    }
    ++t_;
    m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
    v_ = kBeta2 * v_ + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    param.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + kEps);
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream ss;
    ss.precision(10);
    ss << *v;
    return ss.str();
}

void check_finite(const LossBreakdown& l) {
    const auto fail = [&](const char* term) {
        throw TrainingError("non-finite loss at iteration " + std::to_string(l.iteration) +
                            " in term '" + term + "'");
    };
    if (!std::isfinite(l.photometric)) fail("photometric");
    if (!std::isfinite(l.contrastive)) fail("contrastive");
    if (l.voxel && !std::isfinite(*l.voxel)) fail("voxel");
    if (l.pseudo && !std::isfinite(*l.pseudo)) fail("pseudo");
    if (!std::isfinite(l.total)) fail("total");
}

void clip_gradients(SceneGradients& g, double bound) {
    for (Eigen::MatrixXd* m : {&g.position, &g.log_scale, &g.rotation, &g.opacity, &g.color, &g.feature}) {
        *m = m->cwiseMax(-bound).cwiseMin(bound);
    }
}

void accumulate(LossBreakdown& acc, const LossBreakdown& l) {
    acc.photometric += l.photometric;
    acc.contrastive += l.contrastive;
    if (l.pseudo) acc.pseudo = acc.pseudo.value_or(0.0) + *l.pseudo;
    if (l.voxel) acc.voxel = l.voxel;  // evaluated once per iteration
    acc.total += l.total;
}

}  // namespace

std::string TrainReport::loss_csv() const {
    std::ostringstream ss;
    ss.precision(10);
    ss << "iteration,photo,contra,voxel,pseudo,total\n";
    for (const LossBreakdown& l : curve) {
        ss << l.iteration << ',' << l.photometric << ',' << l.contrastive << ',' << fmt_opt(l.voxel)
           << ',' << fmt_opt(l.pseudo) << ',' << l.total << '\n';
    }
    return ss.str();
}

nlohmann::json TrainReport::to_json() const {
    nlohmann::json j;
    j["iterations"] = curve.size();
    j["wall_seconds"] = wall_seconds;
    j["final_scene_path"] = final_scene_path;
    if (!curve.empty()) {
        const LossBreakdown& last = curve.back();
        j["final"] = {{"photo", last.photometric},
                      {"contra", last.contrastive},
                      {"voxel", last.voxel ? nlohmann::json(*last.voxel) : nlohmann::json(nullptr)},
                      {"pseudo", last.pseudo ? nlohmann::json(*last.pseudo) : nlohmann::json(nullptr)},
                      {"total", last.total}};
    }
    return j;
}

TrainResult train(const Scene& initial, const std::vector<TrainingView>& views,
                  const TrainConfig& cfg, const TrainObserver& observer) {
    cfg.validate();
    validate(initial);
    if (views.empty()) throw std::invalid_argument("training needs at least one view");

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result{initial, {}};
    Scene& scene = result.scene;
    if (cfg.iterations == 0) return result;

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> shift_dist(0.0, cfg.voxel_size);
    std::vector<std::size_t> order(views.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();

    AdamBlock adam_feature(cfg.lr_feature), adam_color(cfg.lr_color), adam_opacity(cfg.lr_opacity);
    AdamBlock adam_position(cfg.lr_geometry), adam_scale(cfg.lr_geometry), adam_rotation(cfg.lr_geometry);

    result.report.curve.reserve(static_cast<std::size_t>(cfg.iterations));
    for (int it = 1; it <= cfg.iterations; ++it) {
        Eigen::Vector3d shift = Eigen::Vector3d::Zero();
        if (voxel_active(cfg, it)) shift = {shift_dist(rng), shift_dist(rng), shift_dist(rng)};

        LossBreakdown step;
        step.iteration = it;
        SceneGradients grads = SceneGradients::zeros(scene.size(), scene.feature_dim);
        for (int k = 0; k < cfg.views_per_step; ++k) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const TrainingView& view = views[order[cursor++]];
            // The voxel term depends only on the scene, so it is taken once per iteration.
            TrainConfig view_cfg = cfg;
            if (k > 0) view_cfg.voxel_interval = std::numeric_limits<int>::max();
            StepResult r = evaluate_step(scene, view, view_cfg, it, shift);
            accumulate(step, r.losses);
            grads += r.grads;
        }
        check_finite(step);
        result.report.curve.push_back(step);

        if (cfg.grad_clip > 0.0) clip_gradients(grads, cfg.grad_clip);
        SceneGradients params = pack_parameters(scene);
        adam_feature.step(params.feature, grads.feature);
        adam_color.step(params.color, grads.color);
        adam_opacity.step(params.opacity, grads.opacity);
        if (cfg.learn_geometry) {
            adam_position.step(params.position, grads.position);
            adam_scale.step(params.log_scale, grads.log_scale);
            adam_rotation.step(params.rotation, grads.rotation);
        }
        params.color = params.color.cwiseMax(0.0).cwiseMin(1.0);
        unpack_parameters(params, scene);
        if (cfg.learn_geometry) {
            for (Gaussian& g : scene.gaussians) g.rotation.normalize();
        }

        if (observer) observer(step, scene);
        if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == cfg.iterations)) {
            spdlog::info("iter {:>6}  photo {:.5f}  contra {:.5f}  voxel {}  pseudo {}  total {:.5f}", it,
                         step.photometric, step.contrastive, fmt_opt(step.voxel),
                         fmt_opt(step.pseudo), step.total);
        }
    }
    result.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace instgs

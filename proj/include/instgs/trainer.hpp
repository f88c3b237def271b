#pragma once

#include "instgs/fixture.hpp"
#include "instgs/rasterizer.hpp"
#include "instgs/scene.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace instgs {

struct TrainConfig {
    int iterations = 3000;
    std::optional<int> stage2_start;  // unset: iterations / 3
    double w_photo = 1.0;
    double w_contra = 0.1;
    double w_voxel = 0.1;
    double w_pseudo = 0.1;
    int voxel_interval = 5;
    double voxel_size = 0.5;
    bool learn_geometry = false;
    double lr_feature = 2.5e-2;
    double lr_color = 2.5e-3;
    double lr_opacity = 5e-2;
    double lr_geometry = 1.6e-4;
    double grad_clip = 1e-2;  // element-wise bound applied before Adam; 0 disables
    std::uint64_t seed = 7;
    int views_per_step = 1;
    int log_every = 500;  // 0 disables progress logging

    [[nodiscard]] int resolved_stage2_start() const;
    /// Throws std::invalid_argument when a field is out of range.
    void validate() const;
};

[[nodiscard]] nlohmann::json config_to_json(const TrainConfig& cfg);
/// Missing keys keep defaults; unknown keys are rejected.
[[nodiscard]] TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Loss terms of one iteration. Scheduled-off terms are nullopt.
struct LossBreakdown {
    int iteration = 0;
    double photometric = 0.0;
    double contrastive = 0.0;
    std::optional<double> voxel;
    std::optional<double> pseudo;
    double total = 0.0;
};

[[nodiscard]] bool voxel_active(const TrainConfig& cfg, int iteration);
[[nodiscard]] bool pseudo_active(const TrainConfig& cfg, int iteration);

struct StepResult {
    LossBreakdown losses;
    SceneGradients grads;  // weighted, w.r.t. stored parameters
};

/// Full loss and gradient of one iteration on one view (1-based iteration).
/// `voxel_shift` is only used when the voxel term is scheduled.
[[nodiscard]] StepResult evaluate_step(const Scene& scene, const TrainingView& view,
                                       const TrainConfig& cfg, int iteration,
                                       const Eigen::Vector3d& voxel_shift, bool with_gradients = true);

/// Loss evaluation without any parameter update.
[[nodiscard]] LossBreakdown step_losses(const Scene& scene, const TrainingView& view,
                                        const TrainConfig& cfg, int iteration,
                                        const Eigen::Vector3d& voxel_shift = Eigen::Vector3d::Zero());

/// Stored-parameter blocks of a scene (same layout as SceneGradients).
[[nodiscard]] SceneGradients pack_parameters(const Scene& scene);
void unpack_parameters(const SceneGradients& params, Scene& scene);

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) over one parameter block.
class AdamBlock {
public:
    explicit AdamBlock(double lr) : lr_(lr) {}
    void step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad);
    [[nodiscard]] int steps() const { return t_; }

private:
    double lr_;
    int t_ = 0;
    Eigen::MatrixXd m_;
    Eigen::MatrixXd v_;
};

struct TrainReport {
    std::vector<LossBreakdown> curve;
    double wall_seconds = 0.0;
    std::string final_scene_path;

    [[nodiscard]] std::string loss_csv() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    Scene scene;
    TrainReport report;
};

/// Called after each parameter update with the iteration's losses.
using TrainObserver = std::function<void(const LossBreakdown&, const Scene&)>;

/// Two-stage optimization. Deterministic for a fixed config seed. Throws
/// TrainingError naming the iteration and term when a loss is not finite.
[[nodiscard]] TrainResult train(const Scene& initial, const std::vector<TrainingView>& views,
                                const TrainConfig& cfg, const TrainObserver& observer = {});

}  // namespace instgs

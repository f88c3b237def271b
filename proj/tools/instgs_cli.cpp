// instgs: generate fixtures, train, evaluate, render and serve scenes.

#include "instgs/edit_service.hpp"
#include "instgs/eval.hpp"
#include "instgs/fixture.hpp"
#include "instgs/image_io.hpp"
#include "instgs/synthdata.hpp"
#include "instgs/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
    try {
        return json::parse(instgs::read_file(path));
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

struct GenArgs {
    std::string spec;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> permutation_seed;
};

int run_gen(const GenArgs& a) {
    instgs::SceneSpec spec;
    if (!a.spec.empty()) spec = instgs::spec_from_json(read_json_file(a.spec));
    if (a.seed) spec.seed = *a.seed;
    spec.validate();
    const std::uint64_t perm = a.permutation_seed.value_or(spec.seed);
    const instgs::GroundTruthScene gts = instgs::generate_scene(spec);
    instgs::write_fixture(gts, spec, a.out, perm);
    spdlog::info("wrote fixture {}: {} gaussians, {} views", a.out, gts.scene.size(), gts.cameras.size());
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> iterations;
    std::optional<int> stage2_start;
    std::optional<double> w_photo, w_contra, w_voxel, w_pseudo;
    std::optional<bool> learn_geometry;
};

int run_train(const TrainArgs& a) {
    instgs::TrainConfig cfg;
    if (!a.config.empty()) cfg = instgs::config_from_json(read_json_file(a.config));
    if (a.seed) cfg.seed = *a.seed;
    if (a.iterations) cfg.iterations = *a.iterations;
    if (a.stage2_start) cfg.stage2_start = *a.stage2_start;
    if (a.w_photo) cfg.w_photo = *a.w_photo;
    if (a.w_contra) cfg.w_contra = *a.w_contra;
    if (a.w_voxel) cfg.w_voxel = *a.w_voxel;
    if (a.w_pseudo) cfg.w_pseudo = *a.w_pseudo;
    if (a.learn_geometry) cfg.learn_geometry = *a.learn_geometry;
    cfg.validate();

    const instgs::Scene init = instgs::load_initial_scene(a.data);
    const std::vector<instgs::TrainingView> views = instgs::load_training_views(a.data);
    spdlog::info("training {} gaussians on {} views for {} iterations (stage 2 from {})", init.size(),
                 views.size(), cfg.iterations, cfg.resolved_stage2_start());
    instgs::TrainResult result = instgs::train(init, views, cfg);
    result.report.final_scene_path = a.out;

    instgs::save_scene(result.scene, a.out);
    instgs::write_file(a.out + ".loss.csv", result.report.loss_csv());
    json report = result.report.to_json();
    report["config"] = instgs::config_to_json(cfg);
    instgs::write_file(a.out + ".report.json", report.dump(2) + "\n");
    spdlog::info("wrote {} ({:.1f} s)", a.out, result.report.wall_seconds);
    return 0;
}

struct EvalArgs {
    std::string scene;
    std::string data;
    std::string out;
};

int run_eval(const EvalArgs& a) {
    const instgs::Scene scene = instgs::load_scene(a.scene);
    const instgs::EvalData data = instgs::load_eval_data(a.data);
    const int fixture_dim = read_json_file(fs::path(a.data) / "fixture.json").at("spec").at("feature_dim").get<int>();
    if (scene.feature_dim != fixture_dim) {
        throw std::runtime_error("scene feature_dim " + std::to_string(scene.feature_dim) +
                                 " does not match fixture feature_dim " + std::to_string(fixture_dim));
    }
    const instgs::EvalReport report = instgs::evaluate(scene, data);
    instgs::write_file(a.out, report.to_json().dump(2) + "\n");
    std::cout << report.table();
    return 0;
}

struct RenderArgs {
    std::string scene;
    std::string camera;
    std::string mode = "rgb";
    std::string out;
};

int run_render(const RenderArgs& a) {
    const instgs::Scene scene = instgs::load_scene(a.scene);
    const instgs::Camera cam = instgs::camera_from_json(read_json_file(a.camera));
    instgs::write_file(a.out, instgs::render_png(scene, cam, a.mode));
    return 0;
}

struct ServeArgs {
    std::string scene;
    std::string bind = "127.0.0.1:8080";
    std::string data;
};

int run_serve(const ServeArgs& a) {
    const auto [host, port] = instgs::parse_bind_address(a.bind);
    auto session = std::make_shared<instgs::EditSession>(instgs::load_scene(a.scene));
    instgs::ServerOptions options;
    if (!a.data.empty()) options.data_dir = fs::path(a.data);
    instgs::EditServer server(session, options);

    // Route SIGINT/SIGTERM to a waiter thread so shutdown happens outside a
    // signal handler.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    const int bound = server.bind(host, port);
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
    });
    spdlog::info("serving {} ({} gaussians) on http://{}:{}", a.scene, session->original().size(), host, bound);
    std::cout << "listening on " << host << ":" << bound << std::endl;
    server.run();
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_st("instgs"));
    spdlog::set_pattern("[%H:%M:%S] %v");

    CLI::App app{"Instance-aware Gaussian splatting toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic fixture directory");
    gen_cmd->add_option("--spec", gen.spec, "Scene spec JSON (defaults if omitted)")->check(CLI::ExistingFile);
    gen_cmd->add_option("--out", gen.out, "Output fixture directory")->required();
    gen_cmd->add_option("--seed", gen.seed, "Override the spec seed");
    gen_cmd->add_option("--permutation-seed", gen.permutation_seed, "Mask order seed (default: scene seed)");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train instance features on a fixture");
    train_cmd->add_option("--data", tr.data, "Fixture directory")->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--config", tr.config, "Train config JSON")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", tr.out, "Output SceneFile")->required();
    train_cmd->add_option("--seed", tr.seed);
    train_cmd->add_option("--iterations", tr.iterations);
    train_cmd->add_option("--stage2-start", tr.stage2_start);
    train_cmd->add_option("--w-photo", tr.w_photo);
    train_cmd->add_option("--w-contra", tr.w_contra);
    train_cmd->add_option("--w-voxel", tr.w_voxel);
    train_cmd->add_option("--w-pseudo", tr.w_pseudo);
    train_cmd->add_option("--learn-geometry", tr.learn_geometry, "true|false");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Score a scene on the fixture's held-out views");
    eval_cmd->add_option("--scene", ev.scene)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", ev.data)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--out", ev.out, "EvalReport JSON")->required();

    RenderArgs rd;
    auto* render_cmd = app.add_subcommand("render", "Render a scene to PNG");
    render_cmd->add_option("--scene", rd.scene)->required()->check(CLI::ExistingFile);
    render_cmd->add_option("--camera", rd.camera, "Camera JSON")->required()->check(CLI::ExistingFile);
    render_cmd->add_option("--mode", rd.mode)->check(CLI::IsMember({"rgb", "id"}));
    render_cmd->add_option("--out", rd.out)->required();

    ServeArgs sv;
    auto* serve_cmd = app.add_subcommand("serve", "Serve the edit API over HTTP");
    serve_cmd->add_option("--scene", sv.scene)->required()->check(CLI::ExistingFile);
    serve_cmd->add_option("--bind", sv.bind, "host:port")->capture_default_str();
    serve_cmd->add_option("--data", sv.data, "Fixture directory for /views")->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen_cmd) return run_gen(gen);
        if (*train_cmd) return run_train(tr);
        if (*eval_cmd) return run_eval(ev);
        if (*render_cmd) return run_render(rd);
        if (*serve_cmd) return run_serve(sv);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 2;
}

#include "instgs/fixture.hpp"

#include "instgs/codebook.hpp"
#include "instgs/image_io.hpp"
#include "instgs/rasterizer.hpp"

#include <cstdio>
#include <stdexcept>

namespace instgs {

namespace fs = std::filesystem;

namespace {

std::string view_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03zu", index);
    return buf;
}

nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(1) + "\n"); }

nlohmann::json read_manifest(const fs::path& dir) {
    const nlohmann::json manifest = read_json(dir / "fixture.json");
    if (manifest.value("format", "") != kFixtureFormat) {
        throw std::runtime_error((dir / "fixture.json").string() + ": unsupported fixture format");
    }
    return manifest;
}

}  // namespace

nlohmann::json masks_to_json(const MaskSet& masks) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < masks.size(); ++i) {
        std::vector<std::int32_t> pixels = masks.mask(i);
        std::sort(pixels.begin(), pixels.end());
        nlohmann::json rle = nlohmann::json::array();
        std::size_t k = 0;
        while (k < pixels.size()) {
            std::size_t run = 1;
            while (k + run < pixels.size() && pixels[k + run] == pixels[k] + static_cast<std::int32_t>(run)) ++run;
            rle.push_back(pixels[k]);
            rle.push_back(run);
            k += run;
        }
        arr.push_back({{"index", i + 1}, {"rle", rle}});
    }
    return {{"width", masks.width()}, {"height", masks.height()}, {"masks", arr}};
}

MaskSet masks_from_json(const nlohmann::json& j) {
    try {
        const int width = j.at("width").get<int>();
        const int height = j.at("height").get<int>();
        const auto& arr = j.at("masks");
        std::vector<std::vector<std::int32_t>> masks(arr.size());
        for (const auto& m : arr) {
            const auto index = m.at("index").get<std::size_t>();
            if (index < 1 || index > arr.size()) throw std::invalid_argument("mask index out of range");
            const auto& rle = m.at("rle");
            if (rle.size() % 2 != 0) throw std::invalid_argument("odd-length mask run list");
            auto& pixels = masks[index - 1];
            for (std::size_t r = 0; r < rle.size(); r += 2) {
                const auto start = rle[r].get<std::int32_t>();
                const auto len = rle[r + 1].get<std::int32_t>();
                for (std::int32_t p = 0; p < len; ++p) pixels.push_back(start + p);
            }
        }
        return MaskSet(width, height, std::move(masks));
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed mask set: ") + e.what());
    }
}

void write_fixture(const GroundTruthScene& gts, const SceneSpec& spec, const fs::path& dir,
                   std::uint64_t permutation_seed) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "gt");
    fs::create_directories(dir / "masks");

    save_scene(training_initialization(gts), dir / "init_scene.igs");
    save_scene(with_label_codewords(gts.scene, gts.gt_label), dir / "gt_scene.igs");
    write_json(dir / "gt_labels.json", nlohmann::json{{"labels", gts.gt_label}});

    const InstancePalette palette(gts.scene.feature_dim);
    nlohmann::json views = nlohmann::json::array();
    for (std::size_t v = 0; v < gts.cameras.size(); ++v) {
        const std::string name = view_name(v);
        const std::string image = "images/" + name + ".png";
        const std::string gt = "gt/" + name + ".png";
        const std::string masks = "masks/" + name + ".json";
        write_png(to_rgb8(render(gts.scene, gts.cameras[v]).color), dir / image);
        write_png(colorize_ids(gts.gt_instance_maps[v], palette), dir / gt);
        write_json(dir / masks, masks_to_json(generate_masks(gts, v, permutation_seed)));
        views.push_back({{"index", v},
                         {"split", is_heldout_view(v) ? "heldout" : "train"},
                         {"camera", camera_to_json(gts.cameras[v])},
                         {"image", image},
                         {"gt", gt},
                         {"masks", masks}});
    }
    write_json(dir / "fixture.json", {{"format", kFixtureFormat},
                                      {"spec", spec_to_json(spec)},
                                      {"permutation_seed", permutation_seed},
                                      {"views", views}});
}

std::vector<TrainingView> load_training_views(const fs::path& dir) {
    const nlohmann::json manifest = read_manifest(dir);
    std::vector<TrainingView> out;
    for (const auto& v : manifest.at("views")) {
        if (v.at("split").get<std::string>() != "train") continue;
        TrainingView tv;
        tv.index = v.at("index").get<std::size_t>();
        tv.camera = camera_from_json(v.at("camera"));
        tv.image = from_rgb8(read_png(dir / v.at("image").get<std::string>()));
        tv.masks = masks_from_json(read_json(dir / v.at("masks").get<std::string>()));
        if (tv.image.width != tv.camera.width || tv.image.height != tv.camera.height ||
            tv.masks.width() != tv.camera.width || tv.masks.height() != tv.camera.height) {
            throw std::runtime_error("view " + std::to_string(tv.index) +
                                     ": image/mask size does not match camera");
        }
        out.push_back(std::move(tv));
    }
    if (out.empty()) throw std::runtime_error(dir.string() + ": fixture has no training views");
    return out;
}

Scene load_initial_scene(const fs::path& dir) { return load_scene(dir / "init_scene.igs"); }

EvalData load_eval_data(const fs::path& dir) {
    const nlohmann::json manifest = read_manifest(dir);
    const int dim = manifest.at("spec").at("feature_dim").get<int>();
    const InstancePalette palette(dim);
    EvalData out;
    for (const auto& v : manifest.at("views")) {
        if (v.at("split").get<std::string>() != "heldout") continue;
        out.indices.push_back(v.at("index").get<std::size_t>());
        out.cameras.push_back(camera_from_json(v.at("camera")));
        out.gt_maps.push_back(palette_to_ids(read_png(dir / v.at("gt").get<std::string>()), palette));
    }
    out.gt_labels = read_json(dir / "gt_labels.json").at("labels").get<std::vector<std::int32_t>>();
    return out;
}

nlohmann::json load_fixture_views(const fs::path& dir) {
    const nlohmann::json manifest = read_manifest(dir);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : manifest.at("views")) {
        out.push_back({{"index", v.at("index")}, {"split", v.at("split")}, {"camera", v.at("camera")}});
    }
    return out;
}

}  // namespace instgs

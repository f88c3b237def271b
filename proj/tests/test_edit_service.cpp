#include "instgs/edit_service.hpp"
#include "instgs/image_io.hpp"
#include "instgs/rasterizer.hpp"
#include "instgs/synthdata.hpp"

#include "test_support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <set>
#include <thread>

using namespace instgs;
using namespace instgs::testing;
using nlohmann::json;

namespace {

struct LabeledScene {
    Scene scene;
    std::vector<Camera> cameras;
};

const LabeledScene& labeled_scene() {
    static const LabeledScene s = [] {
        SceneSpec spec;
        spec.object_count = 3;
        spec.gaussians_per_object = 50;
        spec.ground_resolution = 8;
        spec.extent = 2.0;
        spec.views = 4;
        spec.width = 32;
        spec.height = 24;
        spec.feature_dim = 4;
        const GroundTruthScene g = generate_scene(spec);
        // Labels 0..3 become ids 0..3; give each instance its own color too.
        Scene coded = with_label_codewords(g.scene, g.gt_label);
        return LabeledScene{coded, g.cameras};
    }();
    return s;
}

class RunningServer {
public:
    explicit RunningServer(std::shared_ptr<EditSession> session, ServerOptions options = {})
        : server_(std::move(session), std::move(options)) {
        port_ = server_.bind("127.0.0.1", 0);
        thread_ = std::thread([this] { server_.run(); });
        server_.wait_until_ready();
    }
    ~RunningServer() {
        server_.stop();
        thread_.join();
    }
    [[nodiscard]] int port() const { return port_; }
    [[nodiscard]] httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

private:
    EditServer server_;
    int port_ = 0;
    std::thread thread_;
};

std::string post_json(httplib::Client& c, const std::string& path, const json& body, int expect_status) {
    auto res = c.Post(path, body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == expect_status);
    return res->body;
}

}  // namespace

TEST_CASE("edit semantics") {
    const Scene& s = labeled_scene().scene;
    const Codebook cb(s.feature_dim);
    const std::size_t n2 = count_with_id(s, cb, 2);
    REQUIRE(n2 == 50);

    SUBCASE("delete removes exactly the instance and is idempotent") {
        const EditOp del{EditOp::Kind::Delete, 2, {}};
        const Scene once = apply_edit(s, s, del, cb);
        CHECK(once.size() == s.size() - n2);
        CHECK(count_with_id(once, cb, 2) == 0);
        CHECK(encode_scene(apply_edit(once, s, del, cb)) == encode_scene(once));
    }
    SUBCASE("recolor touches only the target") {
        const EditOp rc{EditOp::Kind::Recolor, 1, Eigen::Vector3d(1.0, 0.0, 0.25)};
        const Scene out = apply_edit(s, s, rc, cb);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (cb.quantize(s.gaussians[i].feature) == 1)
                CHECK(out.gaussians[i].color == Eigen::Vector3d(1.0, 0.0, 0.25));
            else
                CHECK(out.gaussians[i].color == s.gaussians[i].color);
        }
    }
    SUBCASE("isolate hides everything else") {
        const Scene out = apply_edit(s, s, {EditOp::Kind::Isolate, 3, {}}, cb);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (cb.quantize(s.gaussians[i].feature) == 3)
                CHECK(out.gaussians[i].opacity() == s.gaussians[i].opacity());
            else
                CHECK(out.gaussians[i].opacity() == 0.0);
        }
        const IdMap ids = render_id_map(out, labeled_scene().cameras[0], cb);
        for (auto v : ids.data) CHECK((v == 3 || v == kBackground));
    }
    SUBCASE("reset restores the original and the log replays") {
        EditSession session(s);
        session.apply({EditOp::Kind::Delete, 2, {}});
        session.apply({EditOp::Kind::Recolor, 0, Eigen::Vector3d(0.1, 0.2, 0.3)});
        CHECK(encode_scene(*session.snapshot().scene) ==
              encode_scene(replay_edits(s, session.log(), cb)));
        const std::uint64_t v = session.apply({EditOp::Kind::Reset, {}, {}});
        CHECK(v == 3);
        CHECK(encode_scene(*session.snapshot().scene) == encode_scene(s));
        CHECK(encode_scene(replay_edits(s, session.log(), cb)) == encode_scene(s));
    }
}

TEST_CASE("edit JSON parsing") {
    const Codebook cb(4);
    const EditOp op = edit_from_json({{"kind", "recolor"}, {"target_id", 5}, {"new_color", {0.5, 0.0, 1.0}}}, cb);
    CHECK(op.kind == EditOp::Kind::Recolor);
    CHECK(op.target_id == 5);
    CHECK(edit_to_json(op)["new_color"] == json::array({0.5, 0.0, 1.0}));
    CHECK(edit_from_json({{"kind", "reset"}}, cb).kind == EditOp::Kind::Reset);
    CHECK_THROWS_AS((void)edit_from_json({{"kind", "explode"}, {"target_id", 1}}, cb), RequestError);
    CHECK_THROWS_AS((void)edit_from_json({{"kind", "delete"}}, cb), RequestError);
    CHECK_THROWS_AS((void)edit_from_json({{"kind", "delete"}, {"target_id", 16}}, cb), RequestError);
    CHECK_THROWS_AS((void)edit_from_json({{"kind", "delete"}, {"target_id", -1}}, cb), RequestError);
    CHECK_THROWS_AS((void)edit_from_json({{"kind", "recolor"}, {"target_id", 1}, {"new_color", {2, 0, 0}}}, cb),
                    RequestError);
    CHECK_THROWS_AS((void)edit_from_json(json::array(), cb), RequestError);
}

TEST_CASE("pick agrees with the rendered ID map and palette") {
    const LabeledScene& ls = labeled_scene();
    EditSession session(ls.scene);
    const Camera& cam = ls.cameras[1];
    const IdMap ids = render_id_map(ls.scene, cam, session.codebook());
    const Rgb8Image png = decode_png(render_png(ls.scene, cam, "id"));
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            const PickResult r = session.pick(cam, u, v);
            const auto decoded = session.palette().color_to_id({png.at(u, v, 0), png.at(u, v, 1), png.at(u, v, 2)});
            REQUIRE(decoded.has_value());
            if (ids.at(u, v) == kBackground) {
                CHECK_FALSE(r.id.has_value());
                CHECK(*decoded == kBackground);
            } else {
                CHECK(r.id == ids.at(u, v));
                CHECK(*decoded == ids.at(u, v));
            }
        }
    }
    CHECK_THROWS_AS((void)session.pick(cam, cam.width, 0), RequestError);
    CHECK_THROWS_AS((void)session.pick(cam, 0, -1), RequestError);
}

TEST_CASE("pick follows camera and version changes") {
    const LabeledScene& ls = labeled_scene();
    EditSession session(ls.scene);
    const IdMap a = render_id_map(ls.scene, ls.cameras[0], session.codebook());
    const IdMap b = render_id_map(ls.scene, ls.cameras[2], session.codebook());
    int differing = 0;
    for (int v = 0; v < a.height; ++v) {
        for (int u = 0; u < a.width; ++u) {
            const auto pa = session.pick(ls.cameras[0], u, v).id.value_or(kBackground);
            const auto pb = session.pick(ls.cameras[2], u, v).id.value_or(kBackground);
            CHECK(pa == a.at(u, v));
            CHECK(pb == b.at(u, v));
            differing += pa != pb;
        }
    }
    CHECK(differing > 0);
    session.apply({EditOp::Kind::Delete, 1, {}});
    const IdMap after = render_id_map(*session.snapshot().scene, ls.cameras[0], session.codebook());
    for (int v = 0; v < a.height; ++v)
        for (int u = 0; u < a.width; ++u) {
            const PickResult r = session.pick(ls.cameras[0], u, v);
            CHECK(r.id.value_or(kBackground) == after.at(u, v));
            CHECK(r.version == 1);
        }
}

TEST_CASE("bind addresses") {
    CHECK(parse_bind_address("0.0.0.0:9000") == std::pair<std::string, int>{"0.0.0.0", 9000});
    CHECK(parse_bind_address(":81") == std::pair<std::string, int>{"127.0.0.1", 81});
    CHECK_THROWS((void)parse_bind_address("localhost"));
    CHECK_THROWS((void)parse_bind_address("host:99999"));
}

TEST_CASE("HTTP API") {
    const LabeledScene& ls = labeled_scene();
    auto session = std::make_shared<EditSession>(ls.scene);
    RunningServer server(session);
    httplib::Client c = server.client();
    const json cam = camera_to_json(ls.cameras[0]);

    SUBCASE("health and palette") {
        auto res = c.Get("/health");
        REQUIRE(res);
        CHECK(res->status == 200);
        const json h = json::parse(res->body);
        CHECK(h["status"] == "ok");
        CHECK(h["gaussians"] == ls.scene.size());
        CHECK(h["feature_dim"] == 4);
        CHECK(h["scene_version"] == 0);
        CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");

        auto pal = c.Get("/palette");
        REQUIRE(pal);
        CHECK(json::parse(pal->body) == session->palette().to_json());
    }
    SUBCASE("render returns the same bytes as render_png") {
        for (const char* mode : {"rgb", "id"}) {
            auto res = c.Post("/render", json{{"camera", cam}, {"mode", mode}}.dump(), "application/json");
            REQUIRE(res);
            CHECK(res->status == 200);
            CHECK(res->get_header_value("Content-Type") == "image/png");
            CHECK(res->get_header_value("X-Scene-Version") == "0");
            CHECK(res->body == render_png(ls.scene, ls.cameras[0], mode));
        }
    }
    SUBCASE("pick, edit, and versioning") {
        const IdMap ids = render_id_map(ls.scene, ls.cameras[0], session->codebook());
        int pu = -1, pv = -1;
        for (int v = 0; v < ids.height && pu < 0; ++v)
            for (int u = 0; u < ids.width; ++u)
                if (ids.at(u, v) == 2) {
                    pu = u;
                    pv = v;
                    break;
                }
        REQUIRE(pu >= 0);
        json r = json::parse(post_json(c, "/pick", {{"camera", cam}, {"u", pu}, {"v", pv}}, 200));
        CHECK(r["id"] == 2);
        CHECK(r["gaussian_count"] == 50);

        r = json::parse(post_json(c, "/edit", {{"kind", "delete"}, {"target_id", 2}}, 200));
        CHECK(r["scene_version"] == 1);
        r = json::parse(post_json(c, "/pick", {{"camera", cam}, {"u", pu}, {"v", pv}}, 200));
        CHECK(r["id"] != 2);
        CHECK(r["scene_version"] == 1);
        auto img = c.Post("/render", json{{"camera", cam}, {"mode", "rgb"}}.dump(), "application/json");
        REQUIRE(img);
        CHECK(img->get_header_value("X-Scene-Version") == "1");
        CHECK(img->body == render_png(*session->snapshot().scene, ls.cameras[0], "rgb"));

        r = json::parse(post_json(c, "/edit", {{"kind", "reset"}}, 200));
        CHECK(r["scene_version"] == 2);
        CHECK(json::parse(c.Get("/health")->body)["gaussians"] == ls.scene.size());
    }
    SUBCASE("malformed requests are 400 with a reason") {
        json bad_cam = cam;
        bad_cam.erase("fx");
        json e = json::parse(post_json(c, "/render", {{"camera", bad_cam}, {"mode", "rgb"}}, 400));
        CHECK(e["field"] == "fx");
        e = json::parse(post_json(c, "/render", {{"camera", cam}, {"mode", "depth"}}, 400));
        CHECK(e.contains("error"));
        post_json(c, "/pick", {{"camera", cam}, {"u", 1000}, {"v", 0}}, 400);
        post_json(c, "/edit", {{"kind", "delete"}, {"target_id", 99}}, 400);
        auto res = c.Post("/edit", "{not json", "application/json");
        REQUIRE(res);
        CHECK(res->status == 400);
        CHECK(session->snapshot().version == 0);
    }
    SUBCASE("CORS preflight") {
        auto res = c.Options("/render");
        REQUIRE(res);
        CHECK(res->status == 204);
        CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
    }
    SUBCASE("export writes the current scene") {
        TempDir dir("instgs-export");
        const std::string path = (dir.path() / "out.igs").string();
        post_json(c, "/edit", {{"kind", "delete"}, {"target_id", 0}}, 200);
        const json r = json::parse(post_json(c, "/export", {{"path", path}}, 200));
        CHECK(r["gaussians"] == ls.scene.size() - 64);
        CHECK(encode_scene(load_scene(path)) == encode_scene(*session->snapshot().scene));
    }
    SUBCASE("views without a fixture") {
        CHECK(json::parse(c.Get("/views")->body)["views"] == json::array());
    }
    SUBCASE("a second server on the same port fails at startup") {
        EditServer other(session);
        CHECK_THROWS_AS(other.bind("127.0.0.1", server.port()), ServiceError);
    }
}

TEST_CASE("concurrent readers see whole snapshots") {
    const LabeledScene& ls = labeled_scene();
    auto session = std::make_shared<EditSession>(ls.scene);
    const std::set<std::size_t> legal = {ls.scene.size(), ls.scene.size() - 50};
    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::thread reader([&] {
        while (!done) {
            const auto snap = session->snapshot();
            if (!legal.count(snap.scene->size())) ++bad;
        }
    });
    for (int i = 0; i < 50; ++i) {
        session->apply({EditOp::Kind::Delete, 1, {}});
        session->apply({EditOp::Kind::Reset, {}, {}});
    }
    done = true;
    reader.join();
    CHECK(bad == 0);
    CHECK(session->snapshot().version == 100);
}

#include "instgs/edit_service.hpp"

#include "instgs/fixture.hpp"
#include "instgs/image_io.hpp"
#include "instgs/rasterizer.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <sys/socket.h>

#include <cmath>

namespace instgs {

namespace {

const char* kind_name(EditOp::Kind k) {
    switch (k) {
        case EditOp::Kind::Delete: return "delete";
        case EditOp::Kind::Recolor: return "recolor";
        case EditOp::Kind::Isolate: return "isolate";
        case EditOp::Kind::Reset: return "reset";
    }
    return "?";
}

bool has_id(const Gaussian& g, const Codebook& cb, std::int32_t id) { return cb.quantize(g.feature) == id; }

}  // namespace

EditOp edit_from_json(const nlohmann::json& j, const Codebook& cb) {
    if (!j.is_object()) throw RequestError("edit must be a JSON object");
    if (!j.contains("kind") || !j["kind"].is_string()) throw RequestError("edit: missing field 'kind'");
    const std::string kind = j["kind"].get<std::string>();
    EditOp op;
    if (kind == "delete") {
        op.kind = EditOp::Kind::Delete;
    } else if (kind == "recolor") {
        op.kind = EditOp::Kind::Recolor;
    } else if (kind == "isolate") {
        op.kind = EditOp::Kind::Isolate;
    } else if (kind == "reset") {
        op.kind = EditOp::Kind::Reset;
        return op;
    } else {
        throw RequestError("edit: unknown kind '" + kind + "'");
    }

    if (!j.contains("target_id") || !j["target_id"].is_number_integer()) {
        throw RequestError("edit: missing or non-integer field 'target_id'");
    }
    const auto id = j["target_id"].get<std::int64_t>();
    if (id < 0 || id >= static_cast<std::int64_t>(cb.size())) {
        throw RequestError("edit: invalid target_id " + std::to_string(id));
    }
    op.target_id = static_cast<std::int32_t>(id);

    if (op.kind == EditOp::Kind::Recolor) {
        const auto it = j.find("new_color");
        if (it == j.end() || !it->is_array() || it->size() != 3) {
            throw RequestError("edit: recolor needs field 'new_color' as [r, g, b]");
        }
        Eigen::Vector3d c;
        for (int k = 0; k < 3; ++k) {
            if (!(*it)[k].is_number()) throw RequestError("edit: 'new_color' entries must be numbers");
            c[k] = (*it)[k].get<double>();
            if (!(c[k] >= 0.0 && c[k] <= 1.0)) throw RequestError("edit: 'new_color' entries must lie in [0, 1]");
        }
        op.new_color = c;
    }
    return op;
}

nlohmann::json edit_to_json(const EditOp& op) {
    nlohmann::json j = {{"kind", kind_name(op.kind)}};
    if (op.target_id) j["target_id"] = *op.target_id;
    if (op.new_color) j["new_color"] = {(*op.new_color)[0], (*op.new_color)[1], (*op.new_color)[2]};
    return j;
}

Scene apply_edit(const Scene& current, const Scene& original, const EditOp& op, const Codebook& cb) {
    if (op.kind == EditOp::Kind::Reset) return original;
    const std::int32_t id = op.target_id.value();
    Scene out = current;
    switch (op.kind) {
        case EditOp::Kind::Delete:
            std::erase_if(out.gaussians, [&](const Gaussian& g) { return has_id(g, cb, id); });
            break;
        case EditOp::Kind::Recolor:
            for (Gaussian& g : out.gaussians) {
                if (has_id(g, cb, id)) g.color = op.new_color.value();
            }
            break;
        case EditOp::Kind::Isolate:
            for (Gaussian& g : out.gaussians) {
                if (!has_id(g, cb, id)) g.set_opacity(0.0);
            }
            break;
        case EditOp::Kind::Reset:
            break;
    }
    return out;
}

Scene replay_edits(const Scene& original, const std::vector<EditOp>& log, const Codebook& cb) {
    Scene s = original;
    for (const EditOp& op : log) s = apply_edit(s, original, op, cb);
    return s;
}

std::string render_png(const Scene& scene, const Camera& cam, const std::string& mode) {
    if (mode == "rgb") return encode_png(to_rgb8(render(scene, cam).color));
    if (mode == "id") {
        const Codebook cb(scene.feature_dim);
        return encode_png(colorize_ids(render_id_map(scene, cam, cb), InstancePalette(scene.feature_dim)));
    }
    throw RequestError("unknown render mode '" + mode + "' (expected rgb or id)");
}

std::size_t count_with_id(const Scene& scene, const Codebook& cb, std::int32_t id) {
    std::size_t n = 0;
    for (const Gaussian& g : scene.gaussians) n += has_id(g, cb, id) ? 1 : 0;
    return n;
}

EditSession::EditSession(Scene original)
    : original_(std::make_shared<const Scene>(std::move(original))),
      codebook_(original_->feature_dim),
      palette_(original_->feature_dim),
      current_(original_) {}

EditSession::Snapshot EditSession::snapshot() const {
    std::lock_guard lock(mutex_);
    return {current_, version_};
}

std::uint64_t EditSession::apply(const EditOp& op) {
    if (op.kind != EditOp::Kind::Reset && (!op.target_id || !codebook_.valid_id(*op.target_id))) {
        throw RequestError("edit: invalid target_id");
    }
    if (op.kind == EditOp::Kind::Recolor && !op.new_color) throw RequestError("edit: recolor without color");
    std::lock_guard lock(mutex_);
    current_ = std::make_shared<const Scene>(apply_edit(*current_, *original_, op, codebook_));
    log_.push_back(op);
    return ++version_;
}

std::vector<EditOp> EditSession::log() const {
    std::lock_guard lock(mutex_);
    return log_;
}

PickResult EditSession::pick(const Camera& cam, int u, int v) const {
    if (u < 0 || v < 0 || u >= cam.width || v >= cam.height) {
        throw RequestError("pick: pixel (" + std::to_string(u) + ", " + std::to_string(v) +
                           ") outside " + std::to_string(cam.width) + "x" + std::to_string(cam.height));
    }
    const Snapshot snap = snapshot();
    const std::string camera_key = camera_to_json(cam).dump();
    std::shared_ptr<const IdMap> ids;
    {
        std::lock_guard lock(cache_mutex_);
        if (pick_cache_.ids && pick_cache_.version == snap.version && pick_cache_.camera == camera_key) {
            ids = pick_cache_.ids;
        }
    }
    if (!ids) {
        ids = std::make_shared<const IdMap>(render_id_map(*snap.scene, cam, codebook_));
        std::lock_guard lock(cache_mutex_);
        pick_cache_ = {snap.version, camera_key, ids};
    }
    PickResult r;
    r.version = snap.version;
    const std::int32_t id = ids->at(u, v);
    if (id != kBackground) {
        r.id = id;
        r.gaussian_count = count_with_id(*snap.scene, codebook_, id);
    }
    return r;
}

namespace {

void reply_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message,
                 const std::optional<std::string>& field = std::nullopt) {
    nlohmann::json body = {{"error", message}};
    if (field) body["field"] = *field;
    reply_json(res, body, status);
}

nlohmann::json parse_body(const httplib::Request& req) {
    try {
        return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
        throw RequestError("request body is not valid JSON");
    }
}

Camera request_camera(const nlohmann::json& body) {
    if (!body.is_object() || !body.contains("camera")) throw CameraFormatError("camera", "missing");
    return camera_from_json(body["camera"]);
}

int request_pixel(const nlohmann::json& body, const char* key) {
    if (!body.contains(key) || !body[key].is_number_integer()) {
        throw RequestError(std::string("pick: missing or non-integer field '") + key + "'");
    }
    const auto v = body[key].get<std::int64_t>();
    if (v < INT32_MIN || v > INT32_MAX) throw RequestError(std::string("pick: '") + key + "' out of range");
    return static_cast<int>(v);
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const CameraFormatError& e) {
            reply_error(res, 400, e.what(), e.field());
        } catch (const RequestError& e) {
            reply_error(res, 400, e.what());
        } catch (const std::invalid_argument& e) {
            reply_error(res, 400, e.what());
        } catch (const std::exception& e) {
            spdlog::error("{} {}: {}", req.method, req.path, e.what());
            reply_error(res, 500, e.what());
        }
    };
}

void reuse_addr_only(socket_t sock) {
    // The library default also sets SO_REUSEPORT, which would let a second
    // server silently share an occupied port.
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
}

}  // namespace

EditServer::EditServer(std::shared_ptr<EditSession> session, ServerOptions options)
    : session_(std::move(session)), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    server_->set_socket_options(reuse_addr_only);
    // Small JSON replies otherwise wait on delayed ACKs (~40 ms per click).
    server_->set_tcp_nodelay(true);
    routes();
}

EditServer::~EditServer() { stop(); }

void EditServer::routes() {
    httplib::Server& s = *server_;
    const auto session = session_;

    s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Expose-Headers", "X-Scene-Version"}});
    s.Options(".*", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });

    s.Get("/health", guarded([session](const httplib::Request&, httplib::Response& res) {
        const auto snap = session->snapshot();
        res.set_header("X-Scene-Version", std::to_string(snap.version));
        reply_json(res, {{"status", "ok"},
                         {"gaussians", snap.scene->size()},
                         {"feature_dim", snap.scene->feature_dim},
                         {"scene_version", snap.version}});
    }));

    s.Get("/palette", guarded([session](const httplib::Request&, httplib::Response& res) {
        reply_json(res, session->palette().to_json());
    }));

    s.Post("/render", guarded([session](const httplib::Request& req, httplib::Response& res) {
        const nlohmann::json body = parse_body(req);
        const Camera cam = request_camera(body);
        const std::string mode = body.contains("mode") && body["mode"].is_string()
                                     ? body["mode"].get<std::string>()
                                     : throw RequestError("render: missing field 'mode'");
        const auto snap = session->snapshot();
        const std::string png = render_png(*snap.scene, cam, mode);
        res.set_header("X-Scene-Version", std::to_string(snap.version));
        res.set_content(png, "image/png");
    }));

    s.Post("/pick", guarded([session](const httplib::Request& req, httplib::Response& res) {
        const nlohmann::json body = parse_body(req);
        const Camera cam = request_camera(body);
        const PickResult r = session->pick(cam, request_pixel(body, "u"), request_pixel(body, "v"));
        res.set_header("X-Scene-Version", std::to_string(r.version));
        reply_json(res, {{"id", r.id ? nlohmann::json(*r.id) : nlohmann::json(nullptr)},
                         {"gaussian_count", r.gaussian_count},
                         {"scene_version", r.version}});
    }));

    s.Post("/edit", guarded([session](const httplib::Request& req, httplib::Response& res) {
        const EditOp op = edit_from_json(parse_body(req), session->codebook());
        const std::uint64_t version = session->apply(op);
        spdlog::info("edit {} -> version {}", edit_to_json(op).dump(), version);
        res.set_header("X-Scene-Version", std::to_string(version));
        reply_json(res, {{"scene_version", version}});
    }));

    const auto data_dir = options_.data_dir;
    s.Get("/views", guarded([data_dir](const httplib::Request&, httplib::Response& res) {
        reply_json(res, {{"views", data_dir ? load_fixture_views(*data_dir) : nlohmann::json::array()}});
    }));

    s.Post("/export", guarded([session](const httplib::Request& req, httplib::Response& res) {
        const nlohmann::json body = parse_body(req);
        if (!body.is_object() || !body.contains("path") || !body["path"].is_string()) {
            throw RequestError("export: missing field 'path'");
        }
        const std::string path = body["path"].get<std::string>();
        const auto snap = session->snapshot();
        save_scene(*snap.scene, path);
        res.set_header("X-Scene-Version", std::to_string(snap.version));
        reply_json(res, {{"path", path}, {"gaussians", snap.scene->size()}, {"scene_version", snap.version}});
    }));
}

int EditServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = server_->bind_to_any_port(host);
        if (bound <= 0) throw ServiceError("cannot bind " + host + ": no free port");
        return bound;
    }
    if (!server_->bind_to_port(host, port)) {
        throw ServiceError("cannot bind " + host + ":" + std::to_string(port) + " (address in use or not available)");
    }
    return port;
}

void EditServer::run() { server_->listen_after_bind(); }

void EditServer::stop() {
    if (server_) server_->stop();
}

void EditServer::wait_until_ready() const { server_->wait_until_ready(); }

std::pair<std::string, int> parse_bind_address(const std::string& address) {
    const auto colon = address.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("bind address must be host:port");
    std::string host = address.substr(0, colon);
    if (host.empty()) host = "127.0.0.1";
    const std::string port_str = address.substr(colon + 1);
    std::size_t used = 0;
    int port = -1;
    try {
        port = std::stoi(port_str, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (port_str.empty() || used != port_str.size() || port < 0 || port > 65535) {
        throw std::invalid_argument("invalid port in bind address '" + address + "'");
    }
    return {host, port};
}

}  // namespace instgs

#pragma once

#include "instgs/camera.hpp"
#include "instgs/codebook.hpp"
#include "instgs/scene.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace instgs {

/// Rejected request content; the HTTP layer maps it to 400.
class RequestError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ServiceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EditOp {
    enum class Kind { Delete, Recolor, Isolate, Reset };
    Kind kind = Kind::Reset;
    std::optional<std::int32_t> target_id;
    std::optional<Eigen::Vector3d> new_color;  // linear RGB in [0, 1]
};

/// {"kind": "delete"|"recolor"|"isolate"|"reset", "target_id": int,
///  "new_color": [r, g, b]}. Throws RequestError.
[[nodiscard]] EditOp edit_from_json(const nlohmann::json& j, const Codebook& cb);
[[nodiscard]] nlohmann::json edit_to_json(const EditOp& op);

/// Pure edit semantics. `original` is what reset restores.
[[nodiscard]] Scene apply_edit(const Scene& current, const Scene& original, const EditOp& op,
                               const Codebook& cb);
[[nodiscard]] Scene replay_edits(const Scene& original, const std::vector<EditOp>& log, const Codebook& cb);

/// PNG bytes for mode "rgb" (color render) or "id" (palette-colored ID
/// map). Shared by the CLI and /render so both produce identical bytes.
[[nodiscard]] std::string render_png(const Scene& scene, const Camera& cam, const std::string& mode);

[[nodiscard]] std::size_t count_with_id(const Scene& scene, const Codebook& cb, std::int32_t id);

struct PickResult {
    std::optional<std::int32_t> id;
    std::size_t gaussian_count = 0;
    std::uint64_t version = 0;
};

/// Scene state shared by all requests. Readers take an immutable snapshot;
/// edits build a new scene and swap it in under the lock.
class EditSession {
public:
    explicit EditSession(Scene original);

    struct Snapshot {
        std::shared_ptr<const Scene> scene;
        std::uint64_t version = 0;
    };

    [[nodiscard]] Snapshot snapshot() const;
    /// Applies and logs the edit; returns the new version.
    std::uint64_t apply(const EditOp& op);
    [[nodiscard]] std::vector<EditOp> log() const;

    [[nodiscard]] const Scene& original() const { return *original_; }
    [[nodiscard]] const Codebook& codebook() const { return codebook_; }
    [[nodiscard]] const InstancePalette& palette() const { return palette_; }

    /// Throws RequestError when (u, v) lies outside the camera image.
    [[nodiscard]] PickResult pick(const Camera& cam, int u, int v) const;

private:
    std::shared_ptr<const Scene> original_;
    Codebook codebook_;
    InstancePalette palette_;
    mutable std::mutex mutex_;
    std::shared_ptr<const Scene> current_;
    std::uint64_t version_ = 0;
    std::vector<EditOp> log_;

    // Last ID map rendered by pick(): repeated clicks on one frame reuse it.
    struct PickCache {
        std::uint64_t version = 0;
        std::string camera;
        std::shared_ptr<const IdMap> ids;
    };
    mutable std::mutex cache_mutex_;
    mutable PickCache pick_cache_;
};

struct ServerOptions {
    std::optional<std::filesystem::path> data_dir;  // source of /views
};

/// HTTP front end: /health, /palette, /render, /pick, /edit, /views, /export.
class EditServer {
public:
    EditServer(std::shared_ptr<EditSession> session, ServerOptions options = {});
    ~EditServer();
    EditServer(const EditServer&) = delete;
    EditServer& operator=(const EditServer&) = delete;

    /// Port 0 picks a free port. Throws ServiceError when binding fails.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void run();
    void stop();
    void wait_until_ready() const;

private:
    void routes();

    std::shared_ptr<EditSession> session_;
    ServerOptions options_;
    std::unique_ptr<httplib::Server> server_;
};

/// "host:port" or ":port" (host defaults to 127.0.0.1).
[[nodiscard]] std::pair<std::string, int> parse_bind_address(const std::string& address);

}  // namespace instgs

#pragma once

// HTTP session service for interactive annotation:
//
//   POST /sessions                      multipart: volume (file), method, config
//   POST /sessions/{id}/scribbles       {"foreground": [[x,y,z],...], "background": [...]}
//   POST /sessions/{id}/update          train -> infer -> graph cut
//   GET  /sessions/{id}/slice/{axis}/{i}
//   GET  /sessions/{id}/mask            NIfTI download (?format=nii.gz for gzip)
//   GET  /sessions/{id}/status
//
// Errors are JSON {"code": <http status>, "message": "..."}.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "econet/annotation.hpp"
#include "econet/methods.hpp"
#include "econet/volio.hpp"
#include "econet/volume.hpp"

namespace httplib {
class Server;
}

namespace econet::service {

// Carries the HTTP status the error maps to.
class ServiceError : public Error {
public:
    ServiceError(int status, const std::string& message, nlohmann::json details = nullptr)
        : Error(message), status_(status), details_(std::move(details)) {}
    int status() const { return status_; }
    const nlohmann::json& details() const { return details_; }

private:
    int status_;
    nlohmann::json details_;
};

struct ServiceOptions {
    // Sessions are persisted here when non-empty and reloaded on start.
    std::filesystem::path data_dir;
    double lambda = 5.0;
    double sigma = 0.1;
    std::size_t max_upload_bytes = std::size_t{1} << 30;
};

struct SessionConfig {
    std::string method = "econet";
    MethodConfig method_config;
    std::uint64_t seed = 0;
    IntensityWindow window;
};

// Fields: optional "seed", optional "window": [lo, hi], and the method
// config keys (econet, warm_start, ...).
SessionConfig session_config_from_json(const std::string& method, const nlohmann::json& j);
nlohmann::json to_json(const SessionConfig& c);

struct ScribbleCounts {
    std::size_t foreground = 0;  // in this request
    std::size_t background = 0;
    std::size_t total_foreground = 0;  // after merging
    std::size_t total_background = 0;
};

struct UpdateResult {
    // False when no scribble changed since the last fit: the model and mask
    // are kept, since retraining on the same data only drifts the weights.
    bool refit = true;
    std::size_t foreground_voxels = 0;
    // DICE against the previous mask; empty on the first update.
    std::optional<double> stability_dice;
    double train_seconds = 0.0;
    double infer_seconds = 0.0;
    double regularize_seconds = 0.0;
    int update_index = 0;
};

enum class Axis { x, y, z };
Axis axis_from_string(const std::string& s);

struct SliceView {
    Axis axis = Axis::z;
    int index = 0;
    int width = 0;   // first in-plane axis (x for z/y slices, y for x slices)
    int height = 0;  // second in-plane axis
    std::vector<std::uint8_t> pixels;  // row-major, normalized intensity * 255
    // Per row: alternating [start, length] pairs of foreground runs.
    std::optional<std::vector<std::vector<int>>> mask_rows;
    std::vector<Coord> foreground_scribbles;  // scribbles on this slice
    std::vector<Coord> background_scribbles;
};

// Run-length codec used for mask rows.
std::vector<int> rle_encode_row(const std::uint8_t* row, int width);
std::vector<std::uint8_t> rle_decode_row(const std::vector<int>& runs, int width);

nlohmann::json to_json(const SliceView& s);

class Service {
public:
    explicit Service(ServiceOptions options = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // In-process API; every call throws ServiceError with the HTTP status.
    // `volume` is in raw intensity units and is normalized with the
    // session's window.
    std::string create_session(const Volume3D& volume, const SessionConfig& cfg);
    ScribbleCounts add_scribbles(const std::string& id, const ScribbleSet& s);
    UpdateResult update(const std::string& id);
    SliceView slice(const std::string& id, Axis axis, int index) const;
    LabelMask export_mask(const std::string& id) const;
    nlohmann::json status(const std::string& id) const;
    std::vector<std::string> session_ids() const;

    // Parses an uploaded volume: NIfTI (plain or gzip) by content, or raw
    // float32 when a sidecar JSON is given.
    static Volume3D decode_upload(const std::string& bytes, const std::string& sidecar);

    httplib::Server& http();
    bool listen(const std::string& host, int port);
    // Binds an ephemeral port; returns it or -1.
    int bind_any_port(const std::string& host);
    bool listen_after_bind();
    void stop();

private:
    struct Session;
    std::shared_ptr<Session> find(const std::string& id) const;
    void persist_meta(const Session& s) const;
    void persist_scribbles(const Session& s) const;
    void persist_update(const Session& s) const;
    void load_sessions();
    void install_routes();

    ServiceOptions opt_;
    mutable std::shared_mutex sessions_mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace econet::service

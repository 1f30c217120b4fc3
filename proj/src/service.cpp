#include "econet/service.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>

#include <httplib.h>

#include "econet/graphcut.hpp"
#include "econet/metrics.hpp"

namespace econet::service {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& data) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, p);
}

std::string new_session_id() {
    static std::mutex mu;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lock(mu);
    static const char* hex = "0123456789abcdef";
    std::string id;
    for (int i = 0; i < 16; ++i) id.push_back(hex[rng() & 15]);
    return id;
}

bool valid_session_id(const std::string& id) {
    return !id.empty() && id.size() <= 64 &&
           std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; });
}

json coords_json(const std::vector<Coord>& cs) {
    json a = json::array();
    for (const auto& c : cs) a.push_back({c.x, c.y, c.z});
    return a;
}

}  // namespace

SessionConfig session_config_from_json(const std::string& method, const json& j) {
    if (!is_method_id(method)) throw ServiceError(400, "unknown method '" + method + "'");
    SessionConfig c;
    c.method = method;
    if (j.is_null()) return c;
    if (!j.is_object()) throw ServiceError(400, "config must be a JSON object");
    try {
        json mc = j;
        if (mc.contains("seed")) {
            c.seed = mc.at("seed").get<std::uint64_t>();
            mc.erase("seed");
        }
        if (mc.contains("window")) {
            const auto& w = mc.at("window");
            c.window = {w.at(0).get<double>(), w.at(1).get<double>()};
            if (!(c.window.lo < c.window.hi)) throw ServiceError(400, "window must satisfy lo < hi");
            mc.erase("window");
        }
        c.method_config = method_config_from_json(mc);
        c.method_config.econet.validate();
    } catch (const ServiceError&) {
        throw;
    } catch (const std::exception& e) {
        throw ServiceError(400, std::string("invalid config: ") + e.what());
    }
    return c;
}

json to_json(const SessionConfig& c) {
    json j = to_json(c.method_config);
    j["seed"] = c.seed;
    j["window"] = {c.window.lo, c.window.hi};
    return j;
}

Axis axis_from_string(const std::string& s) {
    if (s == "x") return Axis::x;
    if (s == "y") return Axis::y;
    if (s == "z") return Axis::z;
    throw ServiceError(400, "axis must be x, y or z, got '" + s + "'");
}

std::vector<int> rle_encode_row(const std::uint8_t* row, int width) {
    std::vector<int> runs;
    int x = 0;
    while (x < width) {
        if (!row[x]) {
            ++x;
            continue;
        }
        const int start = x;
        while (x < width && row[x]) ++x;
        runs.push_back(start);
        runs.push_back(x - start);
    }
    return runs;
}

std::vector<std::uint8_t> rle_decode_row(const std::vector<int>& runs, int width) {
    if (runs.size() % 2) throw InvalidArgument("run list must hold start/length pairs");
    std::vector<std::uint8_t> row(static_cast<std::size_t>(width), 0);
    for (std::size_t i = 0; i < runs.size(); i += 2) {
        const int s = runs[i], n = runs[i + 1];
        if (s < 0 || n < 0 || s + n > width) throw InvalidArgument("run exceeds row width");
        std::fill_n(row.begin() + s, n, std::uint8_t{1});
    }
    return row;
}

json to_json(const SliceView& s) {
    const char* axes = "xyz";
    json j{{"axis", std::string(1, axes[static_cast<int>(s.axis)])},
           {"index", s.index},
           {"width", s.width},
           {"height", s.height},
           {"pixels", httplib::detail::base64_encode(std::string(s.pixels.begin(), s.pixels.end()))},
           {"mask_rows", s.mask_rows ? json(*s.mask_rows) : json(nullptr)},
           {"scribbles",
            {{"foreground", coords_json(s.foreground_scribbles)},
             {"background", coords_json(s.background_scribbles)}}}};
    return j;
}

struct Service::Session {
    std::string id;
    SessionConfig cfg;
    Volume3D raw;
    Volume3D volume;  // normalized

    mutable std::mutex mu;  // guards the fields below
    ScribbleSet scribbles;
    ScribbleSet fitted;  // scribbles behind the current mask
    std::shared_ptr<const LabelMask> mask;
    std::unique_ptr<LikelihoodMethod> method;
    int updates = 0;
    UpdateResult last;

    std::atomic<bool> updating{false};
    // Single writer: serializes scribble merges and updates.
    std::mutex update_mu;
};

Service::Service(ServiceOptions options) : opt_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    if (!opt_.data_dir.empty()) {
        fs::create_directories(opt_.data_dir);
        load_sessions();
    }
    install_routes();
}

Service::~Service() { stop(); }

std::shared_ptr<Service::Session> Service::find(const std::string& id) const {
    std::shared_lock lock(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "no session '" + id + "'");
    return it->second;
}

std::vector<std::string> Service::session_ids() const {
    std::shared_lock lock(sessions_mu_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    return ids;
}

Volume3D Service::decode_upload(const std::string& bytes, const std::string& sidecar) {
    if (bytes.empty()) throw ServiceError(400, "volume upload is empty");
    try {
        if (!sidecar.empty()) return decode_raw(bytes_of(bytes), sidecar);
        return decode_nifti(bytes_of(bytes));
    } catch (const Error& e) {
        throw ServiceError(400, std::string("unreadable volume: ") + e.what());
    }
}

std::string Service::create_session(const Volume3D& volume, const SessionConfig& cfg) {
    if (!is_method_id(cfg.method)) throw ServiceError(400, "unknown method '" + cfg.method + "'");
    if (volume.empty()) throw ServiceError(400, "volume is empty");
    auto s = std::make_shared<Session>();
    s->cfg = cfg;
    s->raw = volume;
    try {
        s->volume = normalize_intensity(volume, cfg.window);
        s->method = make_method(cfg.method, cfg.method_config, cfg.seed);
    } catch (const Error& e) {
        throw ServiceError(400, e.what());
    }
    {
        std::unique_lock lock(sessions_mu_);
        do s->id = new_session_id();
        while (sessions_.count(s->id));
        sessions_[s->id] = s;
    }
    if (!opt_.data_dir.empty()) {
        const fs::path dir = opt_.data_dir / s->id;
        fs::create_directories(dir);
        save_volume(s->raw, dir / "volume.nii.gz");
        persist_meta(*s);
        persist_scribbles(*s);
    }
    return s->id;
}

ScribbleCounts Service::add_scribbles(const std::string& id, const ScribbleSet& incoming) {
    auto s = find(id);
    const auto bad = incoming.out_of_bounds(s->volume.dims());
    if (!bad.empty()) {
        throw ServiceError(422, std::to_string(bad.size()) + " scribble voxel(s) outside volume " + s->volume.dims().str(),
                           json{{"offenders", coords_json(bad)}});
    }
    // Merges wait for a running update so each update sees one consistent set.
    std::lock_guard writer(s->update_mu);
    ScribbleCounts out;
    out.foreground = incoming.foreground().size();
    out.background = incoming.background().size();
    {
        std::lock_guard lock(s->mu);
        s->scribbles = merge_scribbles(s->scribbles, incoming);
        out.total_foreground = s->scribbles.foreground().size();
        out.total_background = s->scribbles.background().size();
    }
    persist_scribbles(*s);
    return out;
}

UpdateResult Service::update(const std::string& id) {
    auto s = find(id);
    bool expected = false;
    if (!s->updating.compare_exchange_strong(expected, true)) {
        throw ServiceError(409, "an update is already running for session '" + id + "'");
    }
    struct Release {
        std::atomic<bool>& flag;
        ~Release() { flag = false; }
    } release{s->updating};
    std::lock_guard update_lock(s->update_mu);

    ScribbleSet scribbles;
    std::shared_ptr<const LabelMask> previous;
    bool unchanged = false;
    {
        std::lock_guard lock(s->mu);
        scribbles = s->scribbles;
        previous = s->mask;
        unchanged = previous && s->fitted == scribbles;
    }
    if (scribbles.foreground().empty() || scribbles.background().empty()) {
        throw ServiceError(409, "update needs at least one foreground and one background scribble");
    }
    if (unchanged) {
        UpdateResult r;
        r.refit = false;
        for (auto v : previous->values()) r.foreground_voxels += v;
        r.stability_dice = 1.0;
        {
            std::lock_guard lock(s->mu);
            r.update_index = ++s->updates;
            s->last = r;
        }
        persist_update(*s);
        return r;
    }

    MethodUpdate mu;
    try {
        mu = s->method->update(s->volume, scribbles);
    } catch (const InsufficientScribbles& e) {
        throw ServiceError(409, e.what());
    } catch (const TrainingDiverged& e) {
        throw ServiceError(500, e.what());
    }
    const auto t0 = Clock::now();
    auto mask = std::make_shared<const LabelMask>(graphcut::regularize(mu.likelihood, s->volume, opt_.lambda, opt_.sigma));

    UpdateResult r;
    r.train_seconds = mu.train_seconds;
    r.infer_seconds = mu.infer_seconds;
    r.regularize_seconds = seconds_since(t0);
    for (auto v : mask->values()) r.foreground_voxels += v;
    if (previous) r.stability_dice = metrics::dice(*mask, *previous);
    {
        std::lock_guard lock(s->mu);
        r.update_index = ++s->updates;
        s->mask = mask;
        s->fitted = scribbles;
        s->last = r;
    }
    persist_update(*s);
    return r;
}

SliceView Service::slice(const std::string& id, Axis axis, int index) const {
    auto s = find(id);
    const Dims& d = s->volume.dims();
    const int extent = axis == Axis::x ? d.nx : axis == Axis::y ? d.ny : d.nz;
    if (index < 0 || index >= extent) {
        throw ServiceError(416, "slice index " + std::to_string(index) + " outside [0, " + std::to_string(extent) + ")");
    }
    SliceView v;
    v.axis = axis;
    v.index = index;
    v.width = axis == Axis::x ? d.ny : d.nx;
    v.height = axis == Axis::z ? d.ny : d.nz;
    auto coord = [&](int u, int w) {
        switch (axis) {
            case Axis::x: return Coord{index, u, w};
            case Axis::y: return Coord{u, index, w};
            default: return Coord{u, w, index};
        }
    };
    v.pixels.resize(static_cast<std::size_t>(v.width) * v.height);
    for (int w = 0; w < v.height; ++w)
        for (int u = 0; u < v.width; ++u) {
            const double p = std::clamp(static_cast<double>(s->volume.at(coord(u, w))), 0.0, 1.0);
            v.pixels[static_cast<std::size_t>(w) * v.width + u] = static_cast<std::uint8_t>(std::lround(p * 255.0));
        }

    std::shared_ptr<const LabelMask> mask;
    {
        std::lock_guard lock(s->mu);
        mask = s->mask;
        auto on_slice = [&](const Coord& c) {
            return axis == Axis::x ? c.x == index : axis == Axis::y ? c.y == index : c.z == index;
        };
        for (const auto& c : s->scribbles.foreground())
            if (on_slice(c)) v.foreground_scribbles.push_back(c);
        for (const auto& c : s->scribbles.background())
            if (on_slice(c)) v.background_scribbles.push_back(c);
    }
    if (mask) {
        std::vector<std::vector<int>> rows(static_cast<std::size_t>(v.height));
        std::vector<std::uint8_t> row(static_cast<std::size_t>(v.width));
        for (int w = 0; w < v.height; ++w) {
            for (int u = 0; u < v.width; ++u) row[u] = mask->at(coord(u, w));
            rows[w] = rle_encode_row(row.data(), v.width);
        }
        v.mask_rows = std::move(rows);
    }
    return v;
}

LabelMask Service::export_mask(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (!s->mask) throw ServiceError(409, "session '" + id + "' has no segmentation yet; run an update first");
    LabelMask m = *s->mask;
    m.set_spacing(s->raw.spacing());
    return m;
}

json Service::status(const std::string& id) const {
    auto s = find(id);
    const Dims& d = s->volume.dims();
    std::lock_guard lock(s->mu);
    json j{{"id", s->id},
           {"method", s->cfg.method},
           {"config", to_json(s->cfg)},
           {"dims", {d.nx, d.ny, d.nz}},
           {"spacing", s->raw.spacing()},
           {"foreground_scribbles", s->scribbles.foreground().size()},
           {"background_scribbles", s->scribbles.background().size()},
           {"updates", s->updates},
           {"updating", s->updating.load()},
           {"has_mask", static_cast<bool>(s->mask)}};
    if (s->updates > 0) {
        j["last_update"] = {{"refit", s->last.refit},
                            {"foreground_voxels", s->last.foreground_voxels},
                            {"stability_dice", s->last.stability_dice ? json(*s->last.stability_dice) : json(nullptr)},
                            {"train_seconds", s->last.train_seconds},
                            {"infer_seconds", s->last.infer_seconds},
                            {"regularize_seconds", s->last.regularize_seconds}};
    }
    return j;
}

// ---------------------------------------------------------------------------
// Persistence: <data_dir>/<id>/{volume.nii.gz, meta.json, scribbles.json,
// mask.nii.gz, state.json}
// ---------------------------------------------------------------------------

void Service::persist_meta(const Session& s) const {
    if (opt_.data_dir.empty()) return;
    json meta{{"id", s.id}, {"method", s.cfg.method}, {"config", to_json(s.cfg)}};
    write_file(opt_.data_dir / s.id / "meta.json", meta.dump(2));
}

void Service::persist_scribbles(const Session& s) const {
    if (opt_.data_dir.empty()) return;
    std::string text;
    {
        std::lock_guard lock(s.mu);
        text = scribbles_to_json(s.scribbles);
    }
    write_file(opt_.data_dir / s.id / "scribbles.json", text);
}

void Service::persist_update(const Session& s) const {
    if (opt_.data_dir.empty()) return;
    std::shared_ptr<const LabelMask> mask;
    json state;
    std::string fitted;
    int updates = 0;
    {
        std::lock_guard lock(s.mu);
        mask = s.mask;
        updates = s.updates;
        state = s.method->state();
        fitted = scribbles_to_json(s.fitted);
    }
    const fs::path dir = opt_.data_dir / s.id;
    if (mask) save_label_mask(*mask, dir / "mask.nii.gz");
    write_file(dir / "state.json",
               json{{"updates", updates}, {"fitted", json::parse(fitted)}, {"method_state", state}}.dump());
}

void Service::load_sessions() {
    for (const auto& entry : fs::directory_iterator(opt_.data_dir)) {
        if (!entry.is_directory()) continue;
        const fs::path dir = entry.path();
        if (!fs::exists(dir / "meta.json") || !fs::exists(dir / "volume.nii.gz")) continue;
        try {
            const json meta = json::parse(read_file(dir / "meta.json"));
            auto s = std::make_shared<Session>();
            s->id = meta.at("id").get<std::string>();
            if (!valid_session_id(s->id) || s->id != dir.filename().string()) continue;
            s->cfg = session_config_from_json(meta.at("method").get<std::string>(), meta.at("config"));
            s->raw = load_volume(dir / "volume.nii.gz");
            s->volume = normalize_intensity(s->raw, s->cfg.window);
            s->method = make_method(s->cfg.method, s->cfg.method_config, s->cfg.seed);
            if (fs::exists(dir / "scribbles.json")) s->scribbles = scribbles_from_json(read_file(dir / "scribbles.json"));
            if (fs::exists(dir / "mask.nii.gz")) s->mask = std::make_shared<const LabelMask>(load_label_mask(dir / "mask.nii.gz"));
            if (fs::exists(dir / "state.json")) {
                const json st = json::parse(read_file(dir / "state.json"));
                s->updates = st.value("updates", 0);
                if (st.contains("fitted")) s->fitted = scribbles_from_json(st.at("fitted").dump());
                if (!st.at("method_state").is_null()) s->method->restore(st.at("method_state"));
            }
            sessions_[s->id] = s;
        } catch (const std::exception&) {
            // A damaged session directory is skipped rather than blocking startup.
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, const json& details = nullptr) {
    json j{{"code", status}, {"message", message}};
    if (!details.is_null()) j["details"] = details;
    send_json(res, status, j);
}

template <typename F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const ServiceError& e) {
            send_error(res, e.status(), e.what(), e.details());
        } catch (const json::exception& e) {
            send_error(res, 400, std::string("malformed JSON: ") + e.what());
        } catch (const InvalidArgument& e) {
            send_error(res, 400, e.what());
        } catch (const FormatError& e) {
            send_error(res, 400, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    };
}

ScribbleSet parse_scribble_body(const std::string& body) {
    const json j = json::parse(body);
    if (!j.is_object()) throw ServiceError(400, "scribble body must be a JSON object");
    ScribbleSet s;
    auto take = [&](const char* key, ScribbleClass cls) {
        if (!j.contains(key)) return;
        const auto& arr = j.at(key);
        if (!arr.is_array()) throw ServiceError(400, std::string(key) + " must be an array of [x,y,z]");
        for (const auto& c : arr) {
            if (!c.is_array() || c.size() != 3) throw ServiceError(400, std::string(key) + " entries must be [x,y,z]");
            s.add(Coord{c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()}, cls);
        }
    };
    take("background", ScribbleClass::background);
    take("foreground", ScribbleClass::foreground);
    return s;
}

}  // namespace

httplib::Server& Service::http() { return *server_; }

void Service::install_routes() {
    auto& srv = *server_;
    srv.set_payload_max_length(opt_.max_upload_bytes);
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Headers", "Content-Type"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 if (!req.is_multipart_form_data()) throw ServiceError(400, "expected multipart/form-data");
                 if (!req.has_file("volume")) throw ServiceError(400, "missing 'volume' part");
                 const std::string method = req.has_file("method") ? req.get_file_value("method").content : "econet";
                 json cfg_json = nullptr;
                 if (req.has_file("config")) {
                     const std::string text = req.get_file_value("config").content;
                     if (!text.empty()) {
                         try {
                             cfg_json = json::parse(text);
                         } catch (const json::exception& e) {
                             throw ServiceError(400, std::string("config is not JSON: ") + e.what());
                         }
                     }
                 }
                 const SessionConfig cfg = session_config_from_json(method, cfg_json);
                 const std::string sidecar = req.has_file("sidecar") ? req.get_file_value("sidecar").content : "";
                 const Volume3D v = decode_upload(req.get_file_value("volume").content, sidecar);
                 const std::string id = create_session(v, cfg);
                 json j = status(id);
                 send_json(res, 200, j);
             }));

    srv.Post(R"(/sessions/([^/]+)/scribbles)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string id = req.matches[1];
                 find(id);
                 const ScribbleCounts c = add_scribbles(id, parse_scribble_body(req.body));
                 send_json(res, 200,
                           {{"foreground", c.foreground},
                            {"background", c.background},
                            {"total_foreground", c.total_foreground},
                            {"total_background", c.total_background}});
             }));

    srv.Post(R"(/sessions/([^/]+)/update)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const UpdateResult r = update(req.matches[1]);
                 send_json(res, 200,
                           {{"update", r.update_index},
                            {"refit", r.refit},
                            {"foreground_voxels", r.foreground_voxels},
                            {"stability_dice", r.stability_dice ? json(*r.stability_dice) : json(nullptr)},
                            {"train_seconds", r.train_seconds},
                            {"infer_seconds", r.infer_seconds},
                            {"regularize_seconds", r.regularize_seconds}});
             }));

    srv.Get(R"(/sessions/([^/]+)/slice/([^/]+)/(-?\d+))",
            guarded([this](const httplib::Request& req, httplib::Response& res) {
                const std::string id = req.matches[1];
                find(id);
                const Axis axis = axis_from_string(req.matches[2]);
                int index = 0;
                try {
                    index = std::stoi(req.matches[3]);
                } catch (const std::exception&) {
                    throw ServiceError(416, "slice index out of range");
                }
                send_json(res, 200, to_json(slice(id, axis, index)));
            }));

    srv.Get(R"(/sessions/([^/]+)/mask)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const std::string id = req.matches[1];
                const LabelMask m = export_mask(id);
                auto bytes = encode_nifti(m);
                std::string name = "mask-" + id + ".nii";
                if (req.get_param_value("format") == "nii.gz") {
                    bytes = gzip_compress(bytes);
                    name += ".gz";
                }
                res.status = 200;
                res.set_header("Content-Disposition", "attachment; filename=\"" + name + "\"");
                res.set_content(std::string(bytes.begin(), bytes.end()), "application/octet-stream");
            }));

    srv.Get(R"(/sessions/([^/]+)/status)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, status(req.matches[1]));
            }));

    srv.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
                send_json(res, 200, {{"sessions", session_ids()}, {"methods", method_ids()}});
            }));
}

bool Service::listen(const std::string& host, int port) { return server_->listen(host, port); }

int Service::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool Service::listen_after_bind() { return server_->listen_after_bind(); }

void Service::stop() {
    if (server_) server_->stop();
}

}  // namespace econet::service

#include "econet/annotation.hpp"

#include <numeric>

#include <json.hpp>

namespace econet {

using json = nlohmann::json;

ScribbleSet::ScribbleSet(std::set<Coord> foreground, std::set<Coord> background)
    : fg_(std::move(foreground)), bg_(std::move(background)) {
    for (const auto& c : fg_) {
        if (bg_.count(c)) throw InvalidArgument("scribble voxel labelled both foreground and background");
    }
}

void ScribbleSet::add(const Coord& c, ScribbleClass cls) {
    if (cls == ScribbleClass::foreground) {
        bg_.erase(c);
        fg_.insert(c);
    } else {
        fg_.erase(c);
        bg_.insert(c);
    }
}

bool ScribbleSet::contains(const Coord& c, ScribbleClass cls) const {
    return cls == ScribbleClass::foreground ? fg_.count(c) > 0 : bg_.count(c) > 0;
}

std::vector<Coord> ScribbleSet::out_of_bounds(const Dims& dims) const {
    std::vector<Coord> bad;
    for (const auto* set : {&fg_, &bg_}) {
        for (const auto& c : *set) {
            if (!dims.contains(c)) bad.push_back(c);
        }
    }
    return bad;
}

void ScribbleSet::require_within(const Dims& dims) const {
    const auto bad = out_of_bounds(dims);
    if (!bad.empty()) {
        const auto& c = bad.front();
        throw InvalidArgument(std::to_string(bad.size()) + " scribble voxel(s) outside volume " + dims.str() +
                              ", first (" + std::to_string(c.x) + "," + std::to_string(c.y) + "," +
                              std::to_string(c.z) + ")");
    }
}

Ratio Ratio::make(std::uint64_t num, std::uint64_t den) {
    if (den == 0) throw InvalidArgument("ratio with zero denominator");
    const std::uint64_t g = std::gcd(num, den);
    return g == 0 ? Ratio{0, 1} : Ratio{num / g, den / g};
}

Ratio operator*(const Ratio& r, std::uint64_t k) {
    // cancel before multiplying to stay in range
    const std::uint64_t g = std::gcd(k, r.den);
    return Ratio::make(r.num * (k / g), r.den / g);
}

ClassWeights class_weights(const ScribbleSet& s) {
    const auto nf = s.foreground().size();
    const auto nb = s.background().size();
    if (nf == 0 || nb == 0) {
        throw InsufficientScribbles("need at least one foreground and one background scribble (have " +
                                    std::to_string(nf) + " fg, " + std::to_string(nb) + " bg)");
    }
    ClassWeights w;
    w.foreground_exact = Ratio::make(nf + nb, nf);
    w.background_exact = Ratio::make(nf + nb, nb);
    w.foreground = w.foreground_exact.value();
    w.background = w.background_exact.value();
    return w;
}

ScribbleSet merge_scribbles(const ScribbleSet& existing, const ScribbleSet& incoming) {
    ScribbleSet out = existing;
    for (const auto& c : incoming.foreground()) out.add(c, ScribbleClass::foreground);
    for (const auto& c : incoming.background()) out.add(c, ScribbleClass::background);
    return out;
}

void extract_patch(const Volume3D& v, const Coord& center, int edge, float* out) {
    const int r = edge / 2;
    const Dims& d = v.dims();
    const bool interior = center.x - r >= 0 && center.y - r >= 0 && center.z - r >= 0 && center.x + r < d.nx &&
                          center.y + r < d.ny && center.z + r < d.nz;
    for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy) {
            if (interior) {
                const float* row = &v.at(center.x - r, center.y + dy, center.z + dz);
                for (int i = 0; i < edge; ++i) *out++ = row[i];
            } else {
                for (int dx = -r; dx <= r; ++dx) *out++ = v.clamped(center.x + dx, center.y + dy, center.z + dz);
            }
        }
}

PatchBatch extract_patches(const Volume3D& v, const ScribbleSet& s, int edge) {
    if (edge < 3 || edge % 2 == 0) throw InvalidArgument("patch edge must be odd and >= 3, got " + std::to_string(edge));
    if (s.empty()) throw InvalidArgument("cannot extract patches from an empty scribble set");
    s.require_within(v.dims());

    PatchBatch batch;
    batch.edge = edge;
    const std::size_t pv = batch.patch_voxels();
    batch.values.resize(s.size() * pv);
    batch.labels.reserve(s.size());
    batch.centers.reserve(s.size());
    std::size_t i = 0;
    for (const auto& [set, label] : {std::pair{&s.foreground(), 1}, std::pair{&s.background(), 0}}) {
        for (const auto& c : *set) {
            extract_patch(v, c, edge, batch.values.data() + i * pv);
            batch.labels.push_back(label);
            batch.centers.push_back(c);
            ++i;
        }
    }
    return batch;
}

std::string scribbles_to_json(const ScribbleSet& s) {
    json j;
    j["foreground"] = json::array();
    j["background"] = json::array();
    for (const auto& c : s.foreground()) j["foreground"].push_back({c.x, c.y, c.z});
    for (const auto& c : s.background()) j["background"].push_back({c.x, c.y, c.z});
    return j.dump();
}

ScribbleSet scribbles_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("scribbles are not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw InvalidArgument("scribbles JSON must be an object");
    ScribbleSet s;
    // Background first so that a voxel listed in both ends up foreground
    // deterministically; the documented format never does this.
    for (const auto& [key, cls] : {std::pair{"background", ScribbleClass::background},
                                   std::pair{"foreground", ScribbleClass::foreground}}) {
        if (!j.contains(key)) continue;
        const auto& arr = j[key];
        if (!arr.is_array()) throw InvalidArgument(std::string("\"") + key + "\" must be an array");
        for (const auto& p : arr) {
            if (!p.is_array() || p.size() != 3 || !p[0].is_number_integer() || !p[1].is_number_integer() ||
                !p[2].is_number_integer()) {
                throw InvalidArgument(std::string("\"") + key + "\" entries must be [x,y,z] integer triples");
            }
            s.add({p[0].get<int>(), p[1].get<int>(), p[2].get<int>()}, cls);
        }
    }
    return s;
}

}  // namespace econet

#include "econet/scribbler.hpp"

#include <chrono>
#include <sstream>

#include "econet/graphcut.hpp"
#include "econet/metrics.hpp"

namespace econet::scribbler {

using json = nlohmann::json;

std::vector<Region> missegmented_regions(const LabelMask& pred, const LabelMask& gt) {
    if (pred.dims() != gt.dims()) throw DimensionMismatch("prediction and ground truth dims differ");
    LabelMask fn(gt.dims()), fp(gt.dims());
    for (std::size_t i = 0; i < gt.size(); ++i) {
        fn[i] = gt[i] && !pred[i];
        fp[i] = !gt[i] && pred[i];
    }
    std::vector<Region> out;
    for (const auto& [mask, label] : {std::pair{&fn, ScribbleClass::foreground}, {&fp, ScribbleClass::background}}) {
        const auto cc = metrics::connected_components(*mask, metrics::Connectivity::twentysix);
        const auto first = out.size();
        out.resize(first + cc.count, Region{{}, label});
        for (int k = 0; k < cc.count; ++k) out[first + k].voxels.reserve(cc.sizes[k]);
        for (std::size_t i = 0; i < cc.labels.size(); ++i) {
            if (cc.labels[i]) out[first + cc.labels[i] - 1].voxels.push_back(i);
        }
    }
    return out;
}

std::size_t sample_count(std::size_t v) { return v < 216 ? 0 : (v + 999) / 1000; }

std::size_t sample_region(const Region& region, std::size_t n, const Dims& dims, ScribbleSet& s,
                          std::mt19937_64& rng) {
    std::vector<std::size_t> candidates;
    candidates.reserve(region.voxels.size());
    for (auto i : region.voxels) {
        if (!s.contains(dims.coord(i), region.label)) candidates.push_back(i);
    }
    n = std::min(n, candidates.size());
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = k + static_cast<std::size_t>(rng() % (candidates.size() - k));
        std::swap(candidates[k], candidates[j]);
        s.add(dims.coord(candidates[k]), region.label);
    }
    return n;
}

namespace {

std::uint64_t round_seed(std::uint64_t seed, int round) {
    std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(round) + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

InteractionTrace run_protocol(const Volume3D& v, const LabelMask& gt, LikelihoodMethod& method,
                              const ProtocolOptions& opt, LabelMask* final_mask) {
    if (v.dims() != gt.dims()) throw DimensionMismatch("volume and ground truth dims differ");
    if (count_foreground(gt) == 0) throw InvalidArgument("ground truth has no foreground");
    if (opt.rounds < 1) throw InvalidArgument("protocol needs at least one round");

    InteractionTrace trace;
    trace.method = method.id();
    trace.seed = opt.seed;
    const Dims& d = gt.dims();
    ScribbleSet s;
    LabelMask pred(d, gt.spacing());

    for (int round = 1; round <= opt.rounds; ++round) {
        std::vector<Region> regions;
        if (round == 1) {
            Region fg{{}, ScribbleClass::foreground}, bg{{}, ScribbleClass::background};
            for (std::size_t i = 0; i < gt.size(); ++i) (gt[i] ? fg : bg).voxels.push_back(i);
            regions.push_back(std::move(fg));
            if (!bg.voxels.empty()) regions.push_back(std::move(bg));
        } else {
            regions = missegmented_regions(pred, gt);
        }

        std::mt19937_64 rng(round_seed(opt.seed, round));
        RoundRecord rec;
        rec.round = round;
        rec.regions = regions.size();
        for (const auto& r : regions) {
            const std::size_t added = sample_region(r, sample_count(r.voxels.size()), d, s, rng);
            (r.label == ScribbleClass::foreground ? rec.new_foreground : rec.new_background) += added;
        }
        rec.cumulative = s.size();

        if (round == 1 || rec.new_foreground + rec.new_background > 0) {
            try {
                MethodUpdate u = method.update(v, s);
                rec.train_seconds = u.train_seconds;
                const auto t0 = std::chrono::steady_clock::now();
                pred = graphcut::regularize(u.likelihood, v, opt.lambda, opt.sigma);
                rec.infer_seconds = u.infer_seconds;
                rec.regularize_seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            } catch (const std::exception& e) {
                throw Error("round " + std::to_string(round) + " (" + method.id() + "): " + e.what());
            }
        }
        rec.dice = metrics::dice(pred, gt);
        rec.assd = metrics::assd(pred, gt, {1.0, 1.0, 1.0});
        trace.rounds.push_back(rec);
    }
    if (final_mask) *final_mask = std::move(pred);
    return trace;
}

bool RoundRecord::same_result(const RoundRecord& o) const {
    return round == o.round && regions == o.regions && new_foreground == o.new_foreground &&
           new_background == o.new_background && cumulative == o.cumulative && dice == o.dice && assd == o.assd;
}

bool InteractionTrace::same_result(const InteractionTrace& o) const {
    if (method != o.method || seed != o.seed || rounds.size() != o.rounds.size()) return false;
    for (std::size_t i = 0; i < rounds.size(); ++i) {
        if (!rounds[i].same_result(o.rounds[i])) return false;
    }
    return true;
}

json to_json(const InteractionTrace& t) {
    json rounds = json::array();
    for (const auto& r : t.rounds) {
        rounds.push_back({{"round", r.round},
                          {"regions", r.regions},
                          {"new_foreground", r.new_foreground},
                          {"new_background", r.new_background},
                          {"cumulative", r.cumulative},
                          {"dice", r.dice},
                          {"assd", r.assd ? json(*r.assd) : json(nullptr)},
                          {"train_seconds", r.train_seconds},
                          {"infer_seconds", r.infer_seconds},
                          {"regularize_seconds", r.regularize_seconds}});
    }
    return {{"method", t.method}, {"seed", t.seed}, {"rounds", rounds}};
}

InteractionTrace trace_from_json(const json& j) {
    InteractionTrace t;
    t.method = j.at("method").get<std::string>();
    t.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("rounds")) {
        RoundRecord rec;
        rec.round = r.at("round").get<int>();
        rec.regions = r.at("regions").get<std::size_t>();
        rec.new_foreground = r.at("new_foreground").get<std::size_t>();
        rec.new_background = r.at("new_background").get<std::size_t>();
        rec.cumulative = r.at("cumulative").get<std::size_t>();
        rec.dice = r.at("dice").get<double>();
        if (!r.at("assd").is_null()) rec.assd = r.at("assd").get<double>();
        rec.train_seconds = r.value("train_seconds", 0.0);
        rec.infer_seconds = r.value("infer_seconds", 0.0);
        rec.regularize_seconds = r.value("regularize_seconds", 0.0);
        t.rounds.push_back(rec);
    }
    return t;
}

std::string trace_csv_header() {
    return "sample,method,seed,round,regions,new_foreground,new_background,cumulative,dice,assd,train_seconds,"
           "infer_seconds,regularize_seconds\n";
}

std::string trace_csv_rows(const InteractionTrace& t, const std::string& sample) {
    std::ostringstream out;
    out.precision(17);
    for (const auto& r : t.rounds) {
        out << sample << ',' << t.method << ',' << t.seed << ',' << r.round << ',' << r.regions << ','
            << r.new_foreground << ',' << r.new_background << ',' << r.cumulative << ',' << r.dice << ',';
        if (r.assd) out << *r.assd;
        out << ',' << r.train_seconds << ',' << r.infer_seconds << ',' << r.regularize_seconds << '\n';
    }
    return out.str();
}

}  // namespace econet::scribbler

#include "econet/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

namespace econet::bench {

using json = nlohmann::json;

std::vector<Sample> load_dataset(const DatasetSpec& spec, IntensityWindow window) {
    std::vector<Sample> out;
    if (!spec.volumes.empty()) {
        for (const auto& pair : spec.volumes) {
            Sample s;
            s.name = pair.image.filename().string();
            s.volume = normalize_intensity(load_volume(pair.image), window);
            s.gt = load_label_mask(pair.mask);
            if (s.volume.dims() != s.gt.dims()) {
                throw DimensionMismatch("mask " + pair.mask.string() + " does not match its image");
            }
            out.push_back(std::move(s));
        }
        return out;
    }
    if (spec.phantoms.count < 1) throw InvalidArgument("phantom count must be >= 1");
    for (int k = 0; k < spec.phantoms.count; ++k) {
        PhantomSpec ps = spec.phantoms.spec;
        ps.seed = spec.phantoms.spec.seed + static_cast<std::uint64_t>(k);
        auto [v, m] = generate_phantom(ps);
        out.push_back({to_string(ps.kind) + "-" + std::to_string(ps.seed), normalize_intensity(v, window), std::move(m)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

json phantom_json(const PhantomSpec& p) {
    return {{"kind", to_string(p.kind)},
            {"dims", {p.dims.nx, p.dims.ny, p.dims.nz}},
            {"seed", p.seed},
            {"lesion_count", p.lesion_count},
            {"lesion_radius", {p.lesion_radius_min, p.lesion_radius_max}},
            {"stripe_period", p.stripe_period},
            {"phase_jitter", p.phase_jitter},
            {"phase_smoothing", p.phase_smoothing}};
}

PhantomSpec phantom_from_json(const json& j) {
    PhantomSpec p;
    if (j.contains("kind")) p.kind = phantom_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("dims")) {
        const auto& d = j.at("dims");
        p.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    }
    p.seed = j.value("seed", p.seed);
    p.lesion_count = j.value("lesion_count", p.lesion_count);
    if (j.contains("lesion_radius")) {
        p.lesion_radius_min = j.at("lesion_radius").at(0).get<double>();
        p.lesion_radius_max = j.at("lesion_radius").at(1).get<double>();
    }
    p.stripe_period = j.value("stripe_period", p.stripe_period);
    p.phase_jitter = j.value("phase_jitter", p.phase_jitter);
    p.phase_smoothing = j.value("phase_smoothing", p.phase_smoothing);
    p.validate();
    return p;
}

}  // namespace

json to_json(const BenchConfig& c) {
    json dataset;
    if (c.dataset.volumes.empty()) {
        dataset["phantoms"] = phantom_json(c.dataset.phantoms.spec);
        dataset["phantoms"]["count"] = c.dataset.phantoms.count;
    } else {
        json vols = json::array();
        for (const auto& v : c.dataset.volumes) vols.push_back({{"image", v.image.string()}, {"mask", v.mask.string()}});
        dataset["volumes"] = vols;
    }
    return {{"dataset", dataset},
            {"methods", c.methods},
            {"method_config", to_json(c.method)},
            {"rounds", c.rounds},
            {"lambda", c.lambda},
            {"sigma", c.sigma},
            {"seed", c.seed},
            {"workers", c.workers},
            {"window", {c.window.lo, c.window.hi}},
            {"warmup", c.warmup}};
}

BenchConfig bench_config_from_json(const json& j) {
    BenchConfig c;
    try {
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            if (d.contains("volumes")) {
                for (const auto& v : d.at("volumes")) {
                    c.dataset.volumes.push_back({v.at("image").get<std::string>(), v.at("mask").get<std::string>()});
                }
            } else if (d.contains("phantoms")) {
                c.dataset.phantoms.spec = phantom_from_json(d.at("phantoms"));
                c.dataset.phantoms.count = d.at("phantoms").value("count", c.dataset.phantoms.count);
            }
        }
        if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
        if (j.contains("method_config")) c.method = method_config_from_json(j.at("method_config"));
        c.rounds = j.value("rounds", c.rounds);
        c.lambda = j.value("lambda", c.lambda);
        c.sigma = j.value("sigma", c.sigma);
        c.seed = j.value("seed", c.seed);
        c.workers = j.value("workers", c.workers);
        if (j.contains("window")) c.window = {j.at("window").at(0).get<double>(), j.at("window").at(1).get<double>()};
        c.warmup = j.value("warmup", c.warmup);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed bench config: ") + e.what());
    }
    if (c.methods.empty()) throw InvalidArgument("bench config lists no methods");
    for (const auto& m : c.methods) {
        if (!is_method_id(m)) throw InvalidArgument("unknown method '" + m + "'");
    }
    if (c.rounds < 1) throw InvalidArgument("rounds must be >= 1");
    if (c.workers < 1) throw InvalidArgument("workers must be >= 1");
    return c;
}

std::uint64_t cell_seed(std::uint64_t seed, std::size_t sample, const std::string& method) {
    // FNV-1a over the method name, then splitmix
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : method) h = (h ^ ch) * 0x100000001b3ULL;
    std::uint64_t z = seed ^ (h + 0x9e3779b97f4a7c15ULL * (sample + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return (z ^ (z >> 31)) >> 1;  // keep it representable as a JSON integer
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

double SampleResult::final_dice() const { return trace.rounds.empty() ? 0.0 : trace.rounds.back().dice; }

std::optional<double> SampleResult::final_assd() const {
    return trace.rounds.empty() ? std::nullopt : trace.rounds.back().assd;
}

std::size_t SampleResult::final_scribbles() const {
    return trace.rounds.empty() ? 0 : trace.rounds.back().cumulative;
}

double SampleResult::seconds() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : trace.rounds) {
        if (r.train_seconds + r.infer_seconds <= 0.0) continue;
        sum += r.train_seconds + r.infer_seconds;
        ++n;
    }
    return n ? sum / n : 0.0;
}

std::vector<MethodSummary> summarize(const std::vector<SampleResult>& samples, const std::vector<std::string>& methods) {
    std::vector<MethodSummary> out;
    for (const auto& m : methods) {
        MethodSummary s;
        s.method = m;
        std::vector<double> dice, assd, secs, scribbles;
        for (const auto& r : samples) {
            if (r.method != m) continue;
            if (!r.ok()) {
                ++s.failures;
                continue;
            }
            dice.push_back(r.final_dice());
            if (const auto a = r.final_assd()) assd.push_back(*a);
            else ++s.assd_undefined;
            secs.push_back(r.seconds());
            scribbles.push_back(static_cast<double>(r.final_scribbles()));
        }
        s.dice = metrics::summarize(dice);
        s.assd = metrics::summarize(assd);
        s.seconds = metrics::summarize(secs);
        s.scribbles = metrics::summarize(scribbles);
        out.push_back(s);
    }
    return out;
}

const MethodSummary& Report::summary(const std::string& method) const {
    for (const auto& m : methods) {
        if (m.method == method) return m;
    }
    throw InvalidArgument("report has no method '" + method + "'");
}

std::vector<const SampleResult*> Report::results(const std::string& method) const {
    std::vector<const SampleResult*> out;
    for (const auto& s : samples) {
        if (s.method == method) out.push_back(&s);
    }
    return out;
}

bool Report::same_result(const Report& o) const {
    if (samples.size() != o.samples.size()) return false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto &a = samples[i], &b = o.samples[i];
        if (a.sample != b.sample || a.method != b.method || a.seed != b.seed || a.error != b.error ||
            !a.trace.same_result(b.trace)) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace {

scribbler::ProtocolOptions protocol_options(const BenchConfig& cfg, std::uint64_t seed) {
    scribbler::ProtocolOptions o;
    o.rounds = cfg.rounds;
    o.lambda = cfg.lambda;
    o.sigma = cfg.sigma;
    o.seed = seed;
    return o;
}

}  // namespace

Report run_comparison(const std::vector<Sample>& dataset, const BenchConfig& cfg) {
    if (dataset.empty()) throw InvalidArgument("empty dataset");
    if (cfg.methods.empty()) throw InvalidArgument("no methods");
    for (const auto& m : cfg.methods) {
        if (!is_method_id(m)) throw InvalidArgument("unknown method '" + m + "'");
    }

    if (cfg.warmup) {
        for (const auto& m : cfg.methods) {
            try {
                auto method = make_method(m, cfg.method, cell_seed(cfg.seed, 0, m));
                auto o = protocol_options(cfg, 0);
                o.rounds = 1;
                scribbler::run_protocol(dataset.front().volume, dataset.front().gt, *method, o);
            } catch (const std::exception&) {
                // the real run records the failure
            }
        }
    }

    Report report;
    report.config = cfg;
    const std::size_t cells = dataset.size() * cfg.methods.size();
    report.samples.resize(cells);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t c = next++; c < cells; c = next++) {
            const std::size_t si = c / cfg.methods.size();
            const std::string& m = cfg.methods[c % cfg.methods.size()];
            SampleResult& r = report.samples[c];
            r.sample = dataset[si].name;
            r.method = m;
            r.seed = cell_seed(cfg.seed, si, m);
            r.trace.method = m;
            r.trace.seed = r.seed;
            try {
                auto method = make_method(m, cfg.method, r.seed);
                r.trace = scribbler::run_protocol(dataset[si].volume, dataset[si].gt, *method,
                                                  protocol_options(cfg, r.seed));
            } catch (const std::exception& e) {
                r.error = e.what();
            }
        }
    };
    const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(cells)));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    report.methods = summarize(report.samples, cfg.methods);
    return report;
}

Report run_comparison(const BenchConfig& cfg) { return run_comparison(load_dataset(cfg.dataset, cfg.window), cfg); }

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json summary_json(const metrics::Summary& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

metrics::Summary summary_from_json(const json& j) {
    return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("n").get<std::size_t>()};
}

}  // namespace

json to_json(const Report& r) {
    json samples = json::array();
    for (const auto& s : r.samples) {
        samples.push_back({{"sample", s.sample},
                           {"method", s.method},
                           {"seed", s.seed},
                           {"error", s.error},
                           {"final_dice", s.final_dice()},
                           {"final_assd", s.final_assd() ? json(*s.final_assd()) : json(nullptr)},
                           {"final_scribbles", s.final_scribbles()},
                           {"seconds", s.seconds()},
                           {"trace", scribbler::to_json(s.trace)}});
    }
    json methods = json::array();
    for (const auto& m : r.methods) {
        methods.push_back({{"method", m.method},
                           {"dice", summary_json(m.dice)},
                           {"assd", summary_json(m.assd)},
                           {"seconds", summary_json(m.seconds)},
                           {"scribbles", summary_json(m.scribbles)},
                           {"failures", m.failures},
                           {"assd_undefined", m.assd_undefined}});
    }
    return {{"config", to_json(r.config)}, {"methods", methods}, {"samples", samples}};
}

Report report_from_json(const json& j) {
    Report r;
    try {
        r.config = bench_config_from_json(j.at("config"));
        for (const auto& s : j.at("samples")) {
            SampleResult res;
            res.sample = s.at("sample").get<std::string>();
            res.method = s.at("method").get<std::string>();
            res.seed = s.at("seed").get<std::uint64_t>();
            res.error = s.at("error").get<std::string>();
            res.trace = scribbler::trace_from_json(s.at("trace"));
            r.samples.push_back(std::move(res));
        }
        for (const auto& m : j.at("methods")) {
            MethodSummary ms;
            ms.method = m.at("method").get<std::string>();
            ms.dice = summary_from_json(m.at("dice"));
            ms.assd = summary_from_json(m.at("assd"));
            ms.seconds = summary_from_json(m.at("seconds"));
            ms.scribbles = summary_from_json(m.at("scribbles"));
            ms.failures = m.at("failures").get<std::size_t>();
            ms.assd_undefined = m.at("assd_undefined").get<std::size_t>();
            r.methods.push_back(ms);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed report: ") + e.what());
    }
    return r;
}

std::string report_csv(const Report& r) {
    std::ostringstream out;
    out.precision(17);
    out << "sample,method,seed,final_dice,final_assd,final_scribbles,seconds,error\n";
    for (const auto& s : r.samples) {
        out << s.sample << ',' << s.method << ',' << s.seed << ',' << s.final_dice() << ',';
        if (const auto a = s.final_assd()) out << *a;
        std::string err = s.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << ',' << s.final_scribbles() << ',' << s.seconds() << ',' << err << '\n';
    }
    return out.str();
}

std::string rounds_csv(const Report& r) {
    std::string out = scribbler::trace_csv_header();
    for (const auto& s : r.samples) out += scribbler::trace_csv_rows(s.trace, s.sample);
    return out;
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

std::vector<CurvePoint> dice_cdf_curve(const std::vector<double>& dice, std::vector<double> thresholds) {
    if (dice.empty()) throw InvalidArgument("no samples for the DICE curve");
    if (thresholds.empty()) {
        for (int k = 0; k <= 101; ++k) thresholds.push_back(k / 100.0);
    }
    std::vector<double> sorted = dice;
    std::sort(sorted.begin(), sorted.end());
    std::vector<CurvePoint> out;
    for (double t : thresholds) {
        const auto below = std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
        out.push_back({t, static_cast<double>(below) / static_cast<double>(sorted.size())});
    }
    return out;
}

std::vector<CurvePoint> dice_cdf_curve(const Report& r, const std::string& method) {
    std::vector<double> dice;
    for (const auto* s : r.results(method)) {
        if (s->ok()) dice.push_back(s->final_dice());
    }
    return dice_cdf_curve(dice);
}

std::vector<CurvePoint> scribbles_vs_dice_curve(const std::vector<scribbler::InteractionTrace>& traces) {
    if (traces.empty()) throw InvalidArgument("no traces for the scribbles curve");
    const std::size_t rounds = traces.front().rounds.size();
    for (const auto& t : traces) {
        if (t.rounds.size() != rounds) throw InvalidArgument("traces have different round counts");
    }
    std::vector<CurvePoint> out(rounds);
    for (std::size_t k = 0; k < rounds; ++k) {
        for (const auto& t : traces) {
            out[k].x += static_cast<double>(t.rounds[k].cumulative);
            out[k].y += t.rounds[k].dice;
        }
        out[k].x /= static_cast<double>(traces.size());
        out[k].y /= static_cast<double>(traces.size());
    }
    return out;
}

std::vector<CurvePoint> scribbles_vs_dice_curve(const Report& r, const std::string& method) {
    std::vector<scribbler::InteractionTrace> traces;
    for (const auto* s : r.results(method)) {
        if (s->ok()) traces.push_back(s->trace);
    }
    return scribbles_vs_dice_curve(traces);
}

std::optional<double> scribbles_to_reach(const std::vector<CurvePoint>& curve, double target) {
    for (const auto& p : curve) {
        if (p.y >= target) return p.x;
    }
    return std::nullopt;
}

std::string curves_csv(const Report& r) {
    std::ostringstream out;
    out.precision(17);
    out << "method,curve,x,y\n";
    for (const auto& m : r.config.methods) {
        bool any = false;
        for (const auto* s : r.results(m)) any = any || s->ok();
        if (!any) continue;
        for (const auto& p : dice_cdf_curve(r, m)) out << m << ",dice_cdf," << p.x << ',' << p.y << '\n';
        for (const auto& p : scribbles_vs_dice_curve(r, m)) out << m << ",scribbles_vs_dice," << p.x << ',' << p.y << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

AblationAxis ablation_axis_from_string(const std::string& s) {
    if (s == "K" || s == "kernel") return AblationAxis::kernel;
    if (s == "filters") return AblationAxis::filters;
    if (s == "fc_sizes") return AblationAxis::fc_sizes;
    if (s == "L_num" || s == "conv_layers") return AblationAxis::conv_layers;
    throw InvalidArgument("unknown ablation axis '" + s + "' (K, filters, fc_sizes, L_num)");
}

std::string to_string(AblationAxis a) {
    switch (a) {
        case AblationAxis::kernel: return "K";
        case AblationAxis::filters: return "filters";
        case AblationAxis::fc_sizes: return "fc_sizes";
        case AblationAxis::conv_layers: return "L_num";
    }
    return "?";
}

namespace {

int parse_int(const std::string& s) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw InvalidArgument("not an integer: '" + s + "'");
    return v;
}

void apply(EcoNetConfig& c, AblationAxis axis, const std::string& value) {
    switch (axis) {
        case AblationAxis::kernel: c.kernel = parse_int(value); break;
        case AblationAxis::filters: c.filters = parse_int(value); break;
        case AblationAxis::conv_layers: c.conv_layers = parse_int(value); break;
        case AblationAxis::fc_sizes: {
            c.fc_sizes.clear();
            std::stringstream ss(value);
            std::string part;
            while (std::getline(ss, part, 'x')) c.fc_sizes.push_back(parse_int(part));
            if (c.fc_sizes.empty()) throw InvalidArgument("empty fc_sizes value");
            break;
        }
    }
    c.validate();
}

}  // namespace

std::vector<AblationRow> ablation_sweep(AblationAxis axis, const std::vector<std::string>& values,
                                        const std::vector<Sample>& dataset, const BenchConfig& base) {
    if (values.empty()) throw InvalidArgument("ablation needs at least one value");
    std::vector<AblationRow> rows;
    for (const auto& value : values) {
        AblationRow row;
        row.value = value;
        try {
            BenchConfig cfg = base;
            cfg.methods = {"econet"};
            apply(cfg.method.econet, axis, value);
            const Report r = run_comparison(dataset, cfg);
            row.dice = r.summary("econet").dice;
            double train = 0.0, infer = 0.0;
            int calls = 0;
            for (const auto& s : r.samples) {
                if (!s.ok()) {
                    row.error = s.error;
                    continue;
                }
                for (const auto& rec : s.trace.rounds) {
                    if (rec.train_seconds + rec.infer_seconds <= 0.0) continue;
                    train += rec.train_seconds;
                    infer += rec.infer_seconds;
                    ++calls;
                }
            }
            if (calls) {
                row.train_seconds = train / calls;
                row.infer_seconds = infer / calls;
            }
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(row);
    }
    return rows;
}

std::string ablation_csv(AblationAxis axis, const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << to_string(axis) << ",dice_mean,dice_std,train_seconds,infer_seconds,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        out << r.value << ',' << r.dice.mean << ',' << r.dice.std << ',' << r.train_seconds << ',' << r.infer_seconds
            << ',' << err << '\n';
    }
    return out.str();
}

}  // namespace econet::bench

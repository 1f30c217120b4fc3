#pragma once

// Experiment runner: the synthetic-scribbler protocol over a dataset and a
// set of methods, summary tables, curve data and ablation sweeps.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "econet/methods.hpp"
#include "econet/metrics.hpp"
#include "econet/scribbler.hpp"
#include "econet/volio.hpp"

namespace econet::bench {

struct PhantomSet {
    PhantomSpec spec;  // spec.seed is the first seed
    int count = 10;
};

struct VolumePair {
    std::filesystem::path image;
    std::filesystem::path mask;
};

// Exactly one of the two is used: phantoms when `volumes` is empty.
struct DatasetSpec {
    PhantomSet phantoms;
    std::vector<VolumePair> volumes;
};

struct Sample {
    std::string name;
    Volume3D volume;  // normalized
    LabelMask gt;
};

std::vector<Sample> load_dataset(const DatasetSpec& spec, IntensityWindow window = {});

struct BenchConfig {
    DatasetSpec dataset;
    std::vector<std::string> methods{"econet", "econet-haar", "dybaorf-haar", "gmm", "histogram"};
    MethodConfig method;
    int rounds = 10;
    double lambda = 5.0;
    double sigma = 0.1;
    std::uint64_t seed = 0;
    int workers = 1;
    IntensityWindow window;
    // Run one discarded round per method first so timings exclude warm-up.
    bool warmup = true;
};

nlohmann::json to_json(const BenchConfig& c);
BenchConfig bench_config_from_json(const nlohmann::json& j);

// Seed of one (sample, method) cell; independent of method order.
std::uint64_t cell_seed(std::uint64_t seed, std::size_t sample, const std::string& method);

struct SampleResult {
    std::string sample;
    std::string method;
    std::uint64_t seed = 0;
    std::string error;  // empty on success
    scribbler::InteractionTrace trace;

    bool ok() const { return error.empty(); }
    double final_dice() const;
    std::optional<double> final_assd() const;
    std::size_t final_scribbles() const;
    // Mean train+infer seconds over the rounds in which the method ran.
    double seconds() const;
};

struct MethodSummary {
    std::string method;
    metrics::Summary dice;
    metrics::Summary assd;  // over samples with a defined ASSD
    metrics::Summary seconds;
    metrics::Summary scribbles;
    std::size_t failures = 0;
    std::size_t assd_undefined = 0;
};

struct Report {
    BenchConfig config;
    std::vector<SampleResult> samples;  // sample-major, methods in config order
    std::vector<MethodSummary> methods;

    const MethodSummary& summary(const std::string& method) const;
    std::vector<const SampleResult*> results(const std::string& method) const;
    // Equal up to timing fields.
    bool same_result(const Report& o) const;
};

std::vector<MethodSummary> summarize(const std::vector<SampleResult>& samples, const std::vector<std::string>& methods);

// Per-sample failures are recorded in the report and the run continues.
Report run_comparison(const std::vector<Sample>& dataset, const BenchConfig& cfg);
Report run_comparison(const BenchConfig& cfg);

nlohmann::json to_json(const Report& r);
Report report_from_json(const nlohmann::json& j);
// One row per (sample, method): final-round numbers.
std::string report_csv(const Report& r);
// Per-round rows of every trace.
std::string rounds_csv(const Report& r);

// --- curves --------------------------------------------------------------

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
};

// Fraction of samples whose final DICE is strictly below each threshold.
// Default thresholds: 0, 0.01, ..., 1.01.
std::vector<CurvePoint> dice_cdf_curve(const std::vector<double>& dice, std::vector<double> thresholds = {});
std::vector<CurvePoint> dice_cdf_curve(const Report& r, const std::string& method);

// Per round: (mean cumulative scribbles, mean DICE) across traces. Traces
// must have equal round counts.
std::vector<CurvePoint> scribbles_vs_dice_curve(const std::vector<scribbler::InteractionTrace>& traces);
std::vector<CurvePoint> scribbles_vs_dice_curve(const Report& r, const std::string& method);

// Scribbles at the first curve point with DICE >= target; nullopt if the
// curve never gets there (a plateau below the target).
std::optional<double> scribbles_to_reach(const std::vector<CurvePoint>& curve, double target);

// Long-format CSV: method,curve,x,y.
std::string curves_csv(const Report& r);

// --- ablations ---------------------------------------------------------------

enum class AblationAxis { kernel, filters, fc_sizes, conv_layers };
AblationAxis ablation_axis_from_string(const std::string& s);
std::string to_string(AblationAxis a);

struct AblationRow {
    std::string value;
    metrics::Summary dice;
    double train_seconds = 0.0;  // mean per training call
    double infer_seconds = 0.0;  // mean per inference call
    std::string error;
};

// Values are strings so fc sizes can be written "32x16". Each value runs
// the ECONet protocol over the dataset with that one setting changed.
std::vector<AblationRow> ablation_sweep(AblationAxis axis, const std::vector<std::string>& values,
                                        const std::vector<Sample>& dataset, const BenchConfig& base);
std::string ablation_csv(AblationAxis axis, const std::vector<AblationRow>& rows);

}  // namespace econet::bench

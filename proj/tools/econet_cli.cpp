// econet command line: benchmark runs, curve extraction, ablations and the
// annotation service.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "econet/bench.hpp"
#include "econet/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace econet;

namespace {

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(p.string() + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
}

void print_summary(const bench::Report& r) {
    std::printf("%-14s %18s %18s %14s %14s %s\n", "method", "dice", "assd", "seconds", "scribbles", "failures");
    for (const auto& m : r.methods) {
        std::printf("%-14s %8.4f ± %-7.4f %8.3f ± %-7.3f %6.2f ± %-5.2f %6.0f ± %-5.0f %zu\n", m.method.c_str(),
                    m.dice.mean, m.dice.std, m.assd.mean, m.assd.std, m.seconds.mean, m.seconds.std,
                    m.scribbles.mean, m.scribbles.std, m.failures);
    }
    for (const auto& s : r.samples) {
        if (!s.ok()) std::fprintf(stderr, "failed: %s / %s: %s\n", s.sample.c_str(), s.method.c_str(), s.error.c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online scribble-driven 3-D segmentation: benchmark and annotation service"};
    app.require_subcommand(1);

    auto* bench_cmd = app.add_subcommand("bench", "Run the evaluation protocol");
    bench_cmd->require_subcommand(1);

    fs::path config_path, out_dir = "bench-out";
    auto* run = bench_cmd->add_subcommand("run", "Compare methods with the synthetic scribbler");
    run->add_option("--config", config_path, "JSON config (defaults are used when omitted)");
    run->add_option("--out", out_dir, "Output directory")->capture_default_str();

    std::string axis;
    std::vector<std::string> values;
    fs::path ablation_config;
    fs::path ablation_out = "ablation-out";
    auto* ablation = bench_cmd->add_subcommand("ablation", "Sweep one ECONet hyperparameter");
    ablation->add_option("--axis", axis, "K | filters | fc_sizes | L_num")->required();
    ablation->add_option("--values", values, "Values, e.g. 3,5,7 or 32x16,64x32")->required()->delimiter(',');
    ablation->add_option("--config", ablation_config, "JSON config for dataset and defaults");
    ablation->add_option("--out", ablation_out, "Output directory")->capture_default_str();

    fs::path report_path, curves_out;
    auto* curves = bench_cmd->add_subcommand("curves", "Extract curve data from a report");
    curves->add_option("--report", report_path, "report.json")->required()->check(CLI::ExistingFile);
    curves->add_option("--out", curves_out, "Output CSV (default: curves.csv next to the report)");

    int port = 8080;
    std::string host = "127.0.0.1";
    fs::path data_dir;
    auto* serve = app.add_subcommand("serve", "Run the HTTP annotation service");
    serve->add_option("--port", port, "Port")->capture_default_str();
    serve->add_option("--host", host, "Bind address")->capture_default_str();
    serve->add_option("--data-dir", data_dir, "Directory for session persistence");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            bench::BenchConfig cfg;
            if (!config_path.empty()) cfg = bench::bench_config_from_json(read_json(config_path));
            fs::create_directories(out_dir);
            const auto t0 = std::chrono::steady_clock::now();
            const auto report = bench::run_comparison(cfg);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            write_text(out_dir / "report.json", bench::to_json(report).dump(2));
            write_text(out_dir / "report.csv", bench::report_csv(report));
            write_text(out_dir / "rounds.csv", bench::rounds_csv(report));
            write_text(out_dir / "curves.csv", bench::curves_csv(report));
            print_summary(report);
            std::printf("wall time %.1f s; outputs in %s\n", secs, out_dir.string().c_str());
        } else if (ablation->parsed()) {
            bench::BenchConfig cfg;
            if (!ablation_config.empty()) cfg = bench::bench_config_from_json(read_json(ablation_config));
            const auto a = bench::ablation_axis_from_string(axis);
            const auto dataset = bench::load_dataset(cfg.dataset, cfg.window);
            const auto rows = bench::ablation_sweep(a, values, dataset, cfg);
            fs::create_directories(ablation_out);
            const std::string csv = bench::ablation_csv(a, rows);
            write_text(ablation_out / ("ablation_" + bench::to_string(a) + ".csv"), csv);
            std::cout << csv;
        } else if (curves->parsed()) {
            const auto report = bench::report_from_json(read_json(report_path));
            const fs::path out = curves_out.empty() ? report_path.parent_path() / "curves.csv" : curves_out;
            write_text(out, bench::curves_csv(report));
            for (const auto& m : report.config.methods) {
                const auto curve = bench::scribbles_vs_dice_curve(report, m);
                const auto reach = bench::scribbles_to_reach(curve, 0.8);
                if (reach) std::printf("%-14s reaches DICE 0.8 at %.1f scribbled voxels\n", m.c_str(), *reach);
                else std::printf("%-14s plateaus below DICE 0.8 (final %.4f)\n", m.c_str(), curve.back().y);
            }
            std::printf("wrote %s\n", out.string().c_str());
        } else if (serve->parsed()) {
            service::ServiceOptions opt;
            opt.data_dir = data_dir;
            service::Service svc(opt);
            std::printf("listening on http://%s:%d\n", host.c_str(), port);
            std::fflush(stdout);
            if (!svc.listen(host, port)) {
                std::fprintf(stderr, "cannot listen on %s:%d\n", host.c_str(), port);
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

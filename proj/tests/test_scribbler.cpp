#include <doctest.h>

#include <random>

#include "econet/metrics.hpp"
#include "econet/scribbler.hpp"
#include "econet/volio.hpp"
#include "oracles.hpp"

using namespace econet;
using namespace econet::scribbler;

namespace {

LabelMask ball(Dims d, double cx, double cy, double cz, double r) {
    LabelMask m(d);
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x)
                m.at(x, y, z) = (x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz) <= r * r;
    return m;
}

// Brighter inside the mask, so graph-cut boundaries follow it exactly.
Volume3D volume_for(const LabelMask& m) {
    Volume3D v(m.dims());
    for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i] ? 0.7f : 0.3f;
    return v;
}

LikelihoodMap as_likelihood(const LabelMask& m) {
    LikelihoodMap l(m.dims());
    for (std::size_t i = 0; i < m.size(); ++i) l[i] = m[i] ? 0.99 : 0.01;
    return l;
}

}  // namespace

TEST_CASE("sample_count follows the size rule") {
    CHECK(sample_count(0) == 0);
    CHECK(sample_count(215) == 0);
    CHECK(sample_count(216) == 1);
    CHECK(sample_count(1000) == 1);
    CHECK(sample_count(1001) == 2);
    CHECK(sample_count(262144) == 263);
}

TEST_CASE("missegmented regions") {
    const Dims d{20, 20, 20};
    const LabelMask gt = ball(d, 10, 10, 10, 5);
    CHECK(missegmented_regions(gt, gt).empty());

    const auto empty_pred = missegmented_regions(LabelMask(d), gt);
    REQUIRE(empty_pred.size() == 1);
    CHECK(empty_pred[0].label == ScribbleClass::foreground);
    std::vector<std::size_t> blob;
    for (std::size_t i = 0; i < gt.size(); ++i)
        if (gt[i]) blob.push_back(i);
    CHECK(empty_pred[0].voxels == blob);

    LabelMask comp = gt;
    for (auto& x : comp.storage()) x = 1 - x;
    const auto regions = missegmented_regions(comp, gt);
    std::vector<int> covered(gt.size(), 0);
    for (const auto& r : regions)
        for (auto i : r.voxels) {
            covered[i]++;
            CHECK((r.label == ScribbleClass::foreground) == (gt[i] == 1));
        }
    for (int c : covered) CHECK(c == 1);

    // Diagonal neighbours join one region.
    LabelMask diag(d);
    diag.at(0, 0, 0) = diag.at(1, 1, 1) = 1;
    CHECK(missegmented_regions(diag, LabelMask(d)).size() == 1);
    CHECK_THROWS_AS(missegmented_regions(LabelMask({2, 2, 2}), gt), DimensionMismatch);
}

TEST_CASE("sample_region draws inside the region without repeats") {
    std::mt19937_64 rng(1);
    const Dims d{10, 10, 10};
    Region r{{}, ScribbleClass::background};
    for (std::size_t i = 100; i < 400; ++i) r.voxels.push_back(i);
    ScribbleSet s;
    CHECK(sample_region(r, 50, d, s, rng) == 50);
    CHECK(sample_region(r, 260, d, s, rng) == 250);
    CHECK(s.background().size() == 300);
    for (const auto& c : s.background()) {
        const auto i = d.index(c);
        CHECK((i >= 100 && i < 400));
    }
    CHECK(sample_region(r, 5, d, s, rng) == 0);
}

TEST_CASE("protocol with a perfect method stops adding scribbles after round 1") {
    const Dims d{32, 32, 32};
    const LabelMask gt = ball(d, 16, 16, 16, 7);
    const Volume3D v = volume_for(gt);
    int calls = 0;
    FunctionMethod oracle_method("oracle", [&](const Volume3D&, const ScribbleSet&) {
        ++calls;
        return as_likelihood(gt);
    });
    ProtocolOptions opt;
    opt.seed = 3;
    const InteractionTrace t = run_protocol(v, gt, oracle_method, opt);
    REQUIRE(t.rounds.size() == 10);
    CHECK(calls == 1);
    std::size_t fg = 0;
    for (auto x : gt.values()) fg += x;
    CHECK(t.rounds[0].new_foreground == sample_count(fg));
    CHECK(t.rounds[0].new_background == sample_count(gt.size() - fg));
    for (int r = 1; r < 10; ++r) {
        CHECK(t.rounds[r].new_foreground + t.rounds[r].new_background == 0);
        CHECK(t.rounds[r].dice == 1.0);
        CHECK(t.rounds[r].assd == 0.0);
    }
}

TEST_CASE("protocol accounting, label correctness and determinism") {
    const Dims d{32, 32, 32};
    const LabelMask gt = ball(d, 14, 15, 16, 9);
    const Volume3D v(d, {1, 1, 1}, 0.5f);
    std::vector<ScribbleSet> seen;
    // Predicts a shrunken ball that grows with the number of scribbles, so
    // every round leaves false negatives.
    FunctionMethod growing("growing", [&](const Volume3D&, const ScribbleSet& s) {
        for (const auto& c : s.foreground()) CHECK(gt.at(c) == 1);
        for (const auto& c : s.background()) CHECK(gt.at(c) == 0);
        seen.push_back(s);
        return as_likelihood(ball(d, 14, 15, 16, 2.0 + 0.5 * seen.size()));
    });
    ProtocolOptions opt;
    opt.seed = 5;
    const InteractionTrace a = run_protocol(v, gt, growing, opt);
    std::size_t total = 0;
    for (std::size_t r = 0; r < a.rounds.size(); ++r) {
        total += a.rounds[r].new_foreground + a.rounds[r].new_background;
        CHECK(a.rounds[r].cumulative == total);
        if (r) CHECK(a.rounds[r].cumulative >= a.rounds[r - 1].cumulative);
    }
    // Sampling without replacement against the cumulative set.
    for (std::size_t k = 1; k < seen.size(); ++k) {
        for (const auto& c : seen[k - 1].foreground()) CHECK(seen[k].contains(c, ScribbleClass::foreground));
        CHECK(seen[k].size() > seen[k - 1].size());
    }

    seen.clear();
    const InteractionTrace b = run_protocol(v, gt, growing, opt);
    CHECK(a.same_result(b));
    seen.clear();
    opt.seed = 6;
    CHECK(!a.same_result(run_protocol(v, gt, growing, opt)));
}

TEST_CASE("per-round sample counts follow the regions of the previous prediction") {
    const Dims d{32, 32, 32};
    const LabelMask gt = ball(d, 16, 16, 16, 10);
    const LabelMask fixed = ball(d, 12, 16, 16, 8);
    const Volume3D v = volume_for(fixed);
    FunctionMethod constant("fixed", [&](const Volume3D&, const ScribbleSet&) { return as_likelihood(fixed); });
    ProtocolOptions opt;
    opt.rounds = 3;
    const InteractionTrace t = run_protocol(v, gt, constant, opt);
    std::size_t expect_fg = 0, expect_bg = 0;
    for (const auto& r : missegmented_regions(fixed, gt))
        (r.label == ScribbleClass::foreground ? expect_fg : expect_bg) += sample_count(r.voxels.size());
    CHECK(t.rounds[1].new_foreground == expect_fg);
    CHECK(t.rounds[1].new_background == expect_bg);
    CHECK(t.rounds[1].regions == missegmented_regions(fixed, gt).size());
    CHECK(t.rounds[1].dice == doctest::Approx(oracle::dice(fixed, gt)));
}

TEST_CASE("method failures name the round") {
    const Dims d{32, 32, 32};
    const LabelMask gt = ball(d, 16, 16, 16, 7);
    int calls = 0;
    FunctionMethod flaky("flaky", [&](const Volume3D&, const ScribbleSet&) -> LikelihoodMap {
        if (++calls == 2) throw InvalidArgument("boom");
        return LikelihoodMap(d, {1, 1, 1}, 0.0);
    });
    try {
        run_protocol(Volume3D(d), gt, flaky, {});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("round 2 (flaky): boom") != std::string::npos);
    }
    CHECK_THROWS_AS(run_protocol(Volume3D(d), LabelMask(d), flaky, {}), InvalidArgument);
}

TEST_CASE("traces round-trip through JSON and CSV") {
    InteractionTrace t;
    t.method = "econet";
    t.seed = 42;
    for (int r = 1; r <= 3; ++r) {
        RoundRecord rec;
        rec.round = r;
        rec.regions = r * 2;
        rec.new_foreground = r;
        rec.new_background = 2 * r;
        rec.cumulative = 3 * r * (r + 1) / 2;
        rec.dice = 0.1 * r + 1.0 / 3.0;
        if (r > 1) rec.assd = 1.0 / r;
        rec.train_seconds = 0.5;
        t.rounds.push_back(rec);
    }
    CHECK(trace_from_json(to_json(t)).same_result(t));
    const std::string csv = trace_csv_header() + trace_csv_rows(t, "s0");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.find("s0,econet,42,1,2,1,2,3,") != std::string::npos);
}

TEST_CASE("real method on a phantom: scribbles only depend on predictions") {
    PhantomSpec spec;
    spec.kind = PhantomKind::intensity_separable;
    spec.seed = 2;
    const auto [raw, gt] = generate_phantom(spec);
    const Volume3D v = normalize_intensity(raw);
    auto hist = make_method("histogram", {}, 1);
    ProtocolOptions opt;
    opt.rounds = 4;
    opt.seed = 9;
    LabelMask final_mask;
    const InteractionTrace t = run_protocol(v, gt, *hist, opt, &final_mask);
    CHECK(t.rounds.back().dice == doctest::Approx(metrics::dice(final_mask, gt)));
    CHECK(t.rounds.back().dice > 0.9);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rfa/bench.hpp"

using namespace rfa;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/rfa_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("sweep records are deterministic and well formed") {
    SweepConfig cfg;
    cfg.n_instances = 2;
    cfg.n_queries = 4;
    cfg.M = 8;
    const std::vector<std::size_t> Ds = {8, 16};
    const auto a = approximation_error_sweep(Ds, 3, cfg);
    const auto b = approximation_error_sweep(Ds, 3, cfg);
    REQUIRE(a.size() == Ds.size() * 3 * cfg.n_instances);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].mse_output == b[i].mse_output);
        CHECK(a[i].mse_kernel == b[i].mse_kernel);
        CHECK(a[i].mse_output >= 0.0);
        CHECK(a[i].mse_kernel >= 0.0);
    }
    CHECK_THROWS_AS(approximation_error_sweep({}, 3, cfg), std::invalid_argument);
    CHECK_THROWS_AS(approximation_error_sweep({16, 16}, 3, cfg), std::invalid_argument);
}

TEST_CASE("live element counts follow the closed forms") {
    // growing cache vs constant state at the documented sizes
    CHECK(live_element_count(BenchKind::softmax, 2048, 1, 64, 64) == 262144);
    CHECK(live_element_count(BenchKind::rfa_gaussian, 2048, 1, 64, 64) == 8320);
    const double ratio = 8320.0 / 262144.0;
    CHECK(ratio < 0.10);

    // the softmax count is linear in N, the recurrence count is constant
    for (std::size_t n : {16, 64, 256, 1024}) {
        CHECK(live_element_count(BenchKind::softmax, n, 2, 32, 16) == 2 * n * 2 * 32);
        CHECK(live_element_count(BenchKind::rfa_gaussian, n, 2, 32, 16) ==
              live_element_count(BenchKind::rfa_gaussian, 1, 2, 32, 16));
        CHECK(live_element_count(BenchKind::rfa_arccos, n, 1, 32, 16) == 16 * 32 + 16);
    }
}

TEST_CASE("decode bench produces one record per length with positive timings") {
    DecodeBenchConfig cfg;
    cfg.d = 16;
    cfg.D = 8;
    cfg.warmup = 1;
    cfg.repetitions = 3;
    const std::vector<std::size_t> lengths = {8, 16};
    for (BenchKind kind : {BenchKind::softmax, BenchKind::rfa_gaussian, BenchKind::rfa_arccos}) {
        for (BenchMode mode : {BenchMode::conditional, BenchMode::unconditional}) {
            const auto records = decode_bench(kind, mode, lengths, 1, cfg);
            REQUIRE(records.size() == lengths.size());
            for (std::size_t i = 0; i < records.size(); ++i) {
                CHECK(records[i].length == lengths[i]);
                CHECK(records[i].total_seconds > 0.0);
                CHECK(records[i].median_step_seconds > 0.0);
                CHECK(records[i].live_elements ==
                      live_element_count(kind, lengths[i], 1, cfg.d, cfg.D));
            }
        }
    }
    CHECK_THROWS_AS(decode_bench(BenchKind::softmax, BenchMode::conditional, {16, 8}, 1, cfg),
                    std::invalid_argument);
}

TEST_CASE("loglog slope fitting recovers exponents") {
    const std::vector<std::size_t> xs = {256, 512, 1024, 2048};
    std::vector<double> linear, quadratic;
    for (std::size_t x : xs) {
        linear.push_back(3.0e-6 * static_cast<double>(x));
        quadratic.push_back(1.0e-9 * static_cast<double>(x) * static_cast<double>(x));
    }
    CHECK(fit_loglog_slope(xs, linear) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fit_loglog_slope(xs, quadratic) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("csv emission: header, rows, round trip") {
    TempFile tmp("sweep.csv");

    // empty list -> header only
    emit_csv(std::vector<SweepRecord>{}, tmp.path);
    CHECK(slurp(tmp.path) == "D,seed,instance,mse_output,mse_kernel\n");

    std::vector<SweepRecord> records;
    records.push_back({16, 7, 0, 0.125, 1.0 / 3.0});
    records.push_back({32, 8, 1, 3.0e-17, 0.0});
    emit_csv(records, tmp.path);
    const std::string text = slurp(tmp.path);

    // 3 lines, LF endings, no CR
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
    CHECK(text.find('\r') == std::string::npos);

    // round trip: parse back and compare exactly
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        std::istringstream fields(line);
        std::string field;
        std::getline(fields, field, ',');
        CHECK(std::stoul(field) == records[row].D);
        std::getline(fields, field, ',');
        CHECK(std::stoull(field) == records[row].seed);
        std::getline(fields, field, ',');
        CHECK(std::stoul(field) == records[row].instance);
        std::getline(fields, field, ',');
        double value = 0.0;
        std::from_chars(field.data(), field.data() + field.size(), value);
        CHECK(value == records[row].mse_output);
        std::getline(fields, field, ',');
        std::from_chars(field.data(), field.data() + field.size(), value);
        CHECK(value == records[row].mse_kernel);
        ++row;
    }
    CHECK(row == records.size());

    CHECK_THROWS_AS(emit_csv(records, "/nonexistent-dir/x.csv"), std::runtime_error);
}

TEST_CASE("csv emission for bench records and training curves") {
    TempFile tmp("bench.csv");
    std::vector<DecodeBenchRecord> records(1);
    records[0].kind = BenchKind::rfa_arccos;
    records[0].mode = BenchMode::conditional;
    records[0].length = 64;
    records[0].batch = 2;
    records[0].median_step_seconds = 1.5e-6;
    records[0].total_seconds = 9.6e-5;
    records[0].live_elements = 1024;
    records[0].timer_flagged = true;
    emit_csv(records, tmp.path);
    const std::string text = slurp(tmp.path);
    CHECK(text.find("kind,mode,length,batch,median_step_seconds,total_seconds,live_elements,"
                    "timer_flagged\n") == 0);
    CHECK(text.find("rfa-arccos,conditional,64,2,1.5e-06,9.6e-05,1024,1\n") != std::string::npos);

    TempFile curve_tmp("curve.csv");
    emit_csv(std::vector<CurvePoint>{{0, 2.079, 0.125}, {1, 1.5, 0.5}}, curve_tmp.path);
    const std::string curve_text = slurp(curve_tmp.path);
    CHECK(curve_text.find("step,loss,accuracy\n") == 0);
    CHECK(std::count(curve_text.begin(), curve_text.end(), '\n') == 3);
}

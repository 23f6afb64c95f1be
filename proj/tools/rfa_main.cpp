// Single binary exposing the verification suites, sweeps, benchmarks, and
// toy training, with one root seed and CSV outputs.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rfa/bench.hpp"
#include "rfa/toytrain.hpp"
#include "rfa/verify.hpp"

namespace {

struct CliConfig {
    std::uint64_t seed = 42;
    std::size_t d = 8;
    std::size_t feature_dim = 64;
    std::string kind = "rfa-gaussian";
    std::vector<std::size_t> lengths;
    std::vector<std::size_t> feature_dims = {16, 32, 64, 128, 256};
    std::size_t batch = 1;
    std::string out_path;
    std::string mode = "conditional";
    double tol_recurrence = 1e-10;
    double tol_carry = 1e-12;
    double tol_grad = 1e-5;
    std::size_t sweep_seeds = 20;
    // toy training
    std::size_t steps = 2000;
    std::size_t vocab = 8;
    std::size_t seq_len = 16;
    std::size_t lag = 1;
    std::size_t model_dim = 16;
    double learning_rate = 0.5;
    std::size_t pool_size = 50;
};

void print_config(const std::string& subcommand, const CliConfig& cfg) {
    std::cout << "run " << subcommand << " seed=" << cfg.seed << " d=" << cfg.d
              << " feature_dim=" << cfg.feature_dim << " kind=" << cfg.kind
              << " batch=" << cfg.batch;
    if (!cfg.lengths.empty()) {
        std::cout << " lengths=";
        for (std::size_t i = 0; i < cfg.lengths.size(); ++i) {
            std::cout << (i ? "," : "") << cfg.lengths[i];
        }
    }
    if (!cfg.out_path.empty()) {
        std::cout << " out=" << cfg.out_path;
    }
    std::cout << "\n";
}

int report(const std::vector<rfa::CheckResult>& results) {
    std::size_t failed = 0;
    for (const rfa::CheckResult& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
        if (!r.pass) {
            ++failed;
        }
    }
    std::cout << "result=" << (failed == 0 ? "pass" : "fail") << " checks=" << results.size()
              << " failed=" << failed << "\n";
    return failed == 0 ? 0 : 1;
}

rfa::BenchKind parse_bench_kind(const std::string& kind) {
    if (kind == "softmax") return rfa::BenchKind::softmax;
    if (kind == "rfa-gaussian") return rfa::BenchKind::rfa_gaussian;
    if (kind == "rfa-arccos") return rfa::BenchKind::rfa_arccos;
    throw CLI::ValidationError("--kind", "expected softmax|rfa-gaussian|rfa-arccos");
}

rfa::ToyAttention parse_toy_kind(const std::string& kind) {
    if (kind == "softmax") return rfa::ToyAttention::softmax;
    if (kind == "rfa") return rfa::ToyAttention::rfa;
    if (kind == "rfa-gated") return rfa::ToyAttention::rfa_gated;
    throw CLI::ValidationError("--kind", "expected softmax|rfa|rfa-gated");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"random feature attention: verification, sweeps, benchmarks, toy training"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "config file with key=value lines ('#' comments)");

    CliConfig cfg;
    app.add_option("--seed", cfg.seed, "root seed for all randomness");
    CLI::Option* opt_d = app.add_option("--d", cfg.d, "input dimension");
    app.add_option("--feature-dim", cfg.feature_dim, "number of random vectors D");
    app.add_option("--kind", cfg.kind, "attention backend");
    app.add_option("--lengths", cfg.lengths, "comma-separated sequence lengths")
        ->delimiter(',');
    app.add_option("--feature-dims", cfg.feature_dims, "D values for sweep-d")->delimiter(',');
    app.add_option("--batch", cfg.batch, "batch size");
    app.add_option("--out", cfg.out_path, "output CSV path");
    app.add_option("--mode", cfg.mode, "decode mode: conditional|unconditional");
    app.add_option("--tol-recurrence", cfg.tol_recurrence, "recurrence equivalence tolerance");
    app.add_option("--tol-carry", cfg.tol_carry, "stateful carry tolerance");
    app.add_option("--tol-grad", cfg.tol_grad, "gradient check tolerance");
    app.add_option("--sweep-seeds", cfg.sweep_seeds, "map seeds per sweep cell");
    app.add_option("--steps", cfg.steps, "training steps");
    app.add_option("--vocab", cfg.vocab, "toy task vocabulary size");
    app.add_option("--seq-len", cfg.seq_len, "toy task sequence length");
    app.add_option("--lag", cfg.lag, "toy task recency lag");
    app.add_option("--model-dim", cfg.model_dim, "toy model width");
    app.add_option("--learning-rate", cfg.learning_rate, "SGD learning rate");
    app.add_option("--pool-size", cfg.pool_size, "random matrix pool size");

    CLI::App* verify_kernel =
        app.add_subcommand("verify-kernel", "kernel unbiasedness and variance law");
    CLI::App* verify_recurrence = app.add_subcommand(
        "verify-recurrence", "causal/cross equivalence, stateful carry, unnormalized variant");
    CLI::App* cmd_grad_check =
        app.add_subcommand("grad-check", "analytic vs. finite-difference gradients");
    CLI::App* sweep_d =
        app.add_subcommand("sweep-d", "approximation error vs. feature count, to CSV");
    CLI::App* bench_decode =
        app.add_subcommand("bench-decode", "decode time and live-memory scaling, to CSV");
    CLI::App* train_toy_cmd = app.add_subcommand("train-toy", "toy recency task training, to CSV");
    CLI::App* verify_all = app.add_subcommand("verify-all", "every verification suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (verify_kernel->parsed()) {
            print_config("verify-kernel", cfg);
            return report(rfa::check_kernel_statistics(cfg.seed));
        }
        if (verify_recurrence->parsed()) {
            print_config("verify-recurrence", cfg);
            rfa::RecurrenceOptions opt;
            opt.seed = cfg.seed;
            opt.d = cfg.d;
            opt.D = cfg.feature_dim;
            opt.lengths = cfg.lengths;
            opt.tol_recurrence = cfg.tol_recurrence;
            opt.tol_carry = cfg.tol_carry;
            return report(rfa::check_recurrence(opt));
        }
        if (cmd_grad_check->parsed()) {
            print_config("grad-check", cfg);
            return report(rfa::check_gradients(cfg.seed, cfg.tol_grad));
        }
        if (sweep_d->parsed()) {
            print_config("sweep-d", cfg);
            rfa::SweepConfig sweep;
            sweep.seed = cfg.seed;
            sweep.d = cfg.d;
            const auto records =
                rfa::approximation_error_sweep(cfg.feature_dims, cfg.sweep_seeds, sweep);
            if (!cfg.out_path.empty()) {
                rfa::emit_csv(records, cfg.out_path);
                std::cout << "wrote " << records.size() << " rows to " << cfg.out_path << "\n";
            }
            return 0;
        }
        if (bench_decode->parsed()) {
            print_config("bench-decode", cfg);
            std::vector<std::size_t> lengths = cfg.lengths;
            if (lengths.empty()) {
                lengths = {256, 512, 1024, 2048};
            }
            rfa::DecodeBenchConfig bench;
            bench.seed = cfg.seed;
            bench.D = cfg.feature_dim;
            if (opt_d->count() > 0) {
                bench.d = cfg.d;  // default stays at the simulation width of 64
            }
            const rfa::BenchMode mode = cfg.mode == "unconditional"
                                            ? rfa::BenchMode::unconditional
                                            : rfa::BenchMode::conditional;
            std::cout << "bench d=" << bench.d << " D=" << bench.D << " mode=" << cfg.mode
                      << " warmup=" << bench.warmup << " repetitions=" << bench.repetitions
                      << " single_head=1\n";
            const auto records =
                rfa::decode_bench(parse_bench_kind(cfg.kind), mode, lengths, cfg.batch, bench);
            if (!cfg.out_path.empty()) {
                rfa::emit_csv(records, cfg.out_path);
                std::cout << "wrote " << records.size() << " rows to " << cfg.out_path << "\n";
            }
            for (const auto& r : records) {
                std::cout << to_string(r.kind) << " N=" << r.length
                          << " total_s=" << r.total_seconds << " step_s=" << r.median_step_seconds
                          << " live=" << r.live_elements << "\n";
            }
            return 0;
        }
        if (train_toy_cmd->parsed()) {
            print_config("train-toy", cfg);
            rfa::ToyTask task{cfg.vocab, cfg.seq_len, cfg.lag};
            rfa::TrainConfig train;
            train.kind = parse_toy_kind(cfg.kind == "rfa-gaussian" ? "rfa" : cfg.kind);
            train.steps = cfg.steps;
            train.batch_size = cfg.batch == 1 ? 8 : cfg.batch;
            train.seed = cfg.seed;
            train.model_dim = cfg.model_dim;
            train.feature_D = cfg.feature_dim;
            train.learning_rate = cfg.learning_rate;
            train.pool_size = cfg.pool_size;
            const rfa::TrainResult result = rfa::train_toy(cfg.seed, task, train);
            const rfa::EvalResult eval = rfa::eval_toy(
                result.model, rfa::gen_recency_task(task, rfa::make_stream(cfg.seed, 777).seed,
                                                    256));
            std::cout << "params=" << result.model.param_count()
                      << " final_ce=" << eval.cross_entropy << " accuracy=" << eval.accuracy
                      << " chance_ce=" << std::log(static_cast<double>(cfg.vocab)) << "\n";
            if (!cfg.out_path.empty()) {
                rfa::emit_csv(result.curve, cfg.out_path);
                std::cout << "wrote " << result.curve.size() << " rows to " << cfg.out_path
                          << "\n";
            }
            return 0;
        }
        if (verify_all->parsed()) {
            print_config("verify-all", cfg);
            return report(rfa::run_all_checks(cfg.seed));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

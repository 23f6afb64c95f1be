#include "rfa/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "rfa/feature_map.hpp"

namespace rfa {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Flag runs whose median step cannot be resolved by a ~ns-granularity clock.
constexpr double kTimerResolutionFloor = 5e-8;

struct SweepInstance {
    Matrix queries, keys, values;    // unit-norm queries and keys
    Matrix exact_outputs;            // softmax attention at the same temperature
    Matrix exact_kernel;             // n_queries x M exponential kernel values
};

std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc()) {
        throw std::runtime_error("emit_csv: float formatting failed");
    }
    return std::string(buf, ptr);
}

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("emit_csv: cannot open " + path + " for writing");
    }
    return out;
}

void finish_csv(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) {
        throw std::runtime_error("emit_csv: write failed for " + path);
    }
}

}  // namespace

const char* to_string(BenchKind kind) {
    switch (kind) {
        case BenchKind::softmax: return "softmax";
        case BenchKind::rfa_gaussian: return "rfa-gaussian";
        case BenchKind::rfa_arccos: return "rfa-arccos";
    }
    return "?";
}

const char* to_string(BenchMode mode) {
    return mode == BenchMode::conditional ? "conditional" : "unconditional";
}

std::vector<SweepRecord> approximation_error_sweep(const std::vector<std::size_t>& Ds,
                                                   std::size_t n_seeds,
                                                   const SweepConfig& config) {
    if (Ds.empty()) {
        throw std::invalid_argument("approximation_error_sweep: empty D list");
    }
    for (std::size_t i = 1; i < Ds.size(); ++i) {
        if (Ds[i] <= Ds[i - 1]) {
            throw std::invalid_argument("approximation_error_sweep: D list must be ascending");
        }
    }

    AttentionConfig attn;
    attn.temperature = config.temperature;
    attn.normalize_qk = false;  // instances are built unit-norm already

    // Instances are fixed by config.seed alone, shared across every (D, seed).
    std::vector<SweepInstance> instances;
    instances.reserve(config.n_instances);
    for (std::size_t inst = 0; inst < config.n_instances; ++inst) {
        RngState rng = make_stream(config.seed, 100 + inst);
        SweepInstance si;
        si.queries = seeded_normal_matrix(rng, config.n_queries, config.d);
        si.keys = seeded_normal_matrix(rng, config.M, config.d);
        si.values = seeded_normal_matrix(rng, config.M, config.d);
        for (std::size_t r = 0; r < si.queries.rows; ++r) {
            const Vector u = l2_normalize(si.queries.row_vector(r));
            std::copy(u.begin(), u.end(), si.queries.row(r));
        }
        for (std::size_t r = 0; r < si.keys.rows; ++r) {
            const Vector u = l2_normalize(si.keys.row_vector(r));
            std::copy(u.begin(), u.end(), si.keys.row(r));
        }
        si.exact_outputs = softmax_attention(si.queries, si.keys, si.values, attn);
        si.exact_kernel = Matrix(config.n_queries, config.M);
        for (std::size_t qi = 0; qi < config.n_queries; ++qi) {
            for (std::size_t ki = 0; ki < config.M; ++ki) {
                double dist_sq = 0.0;
                for (std::size_t j = 0; j < config.d; ++j) {
                    const double diff = si.queries.at(qi, j) - si.keys.at(ki, j);
                    dist_sq += diff * diff;
                }
                si.exact_kernel.at(qi, ki) = std::exp(-dist_sq / (2.0 * config.temperature));
            }
        }
        instances.push_back(std::move(si));
    }

    std::vector<SweepRecord> records;
    records.reserve(Ds.size() * n_seeds * config.n_instances);
    for (std::size_t D : Ds) {
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const std::uint64_t map_seed = make_stream(config.seed, 9000 + s).seed;
            const RealizedFeatureMap map = build_feature_map(
                FeatureMapSpec::make(FeatureMapKind::gaussian, config.d, D, 1.0, map_seed));
            for (std::size_t inst = 0; inst < instances.size(); ++inst) {
                const SweepInstance& si = instances[inst];
                const Matrix approx = rfa_cross(si.queries, si.keys, si.values, map, attn);
                double mse_out = 0.0;
                for (std::size_t i = 0; i < approx.data.size(); ++i) {
                    const double diff = approx.data[i] - si.exact_outputs.data[i];
                    mse_out += diff * diff;
                }
                mse_out /= static_cast<double>(approx.data.size());
                double mse_kernel = 0.0;
                for (std::size_t qi = 0; qi < config.n_queries; ++qi) {
                    const Vector phi_q = apply_map(map, si.queries.row_vector(qi));
                    for (std::size_t ki = 0; ki < config.M; ++ki) {
                        const Vector phi_k = apply_map(map, si.keys.row_vector(ki));
                        const double diff = dot(phi_q, phi_k) - si.exact_kernel.at(qi, ki);
                        mse_kernel += diff * diff;
                    }
                }
                mse_kernel /= static_cast<double>(config.n_queries * config.M);
                records.push_back({D, map_seed, inst, mse_out, mse_kernel});
            }
        }
    }
    return records;
}

std::size_t live_element_count(BenchKind kind, std::size_t length, std::size_t batch,
                               std::size_t d, std::size_t D) {
    if (kind == BenchKind::softmax) {
        return batch * length * 2 * d;  // cached keys and values grow with N
    }
    const std::size_t fdim = kind == BenchKind::rfa_gaussian ? 2 * D : D;
    return batch * (fdim * d + fdim);  // S and z, independent of N
}

namespace {

// Keeps the decode loop's outputs observable so the work cannot be elided.
volatile double g_bench_sink = 0.0;

struct DecodeWorkspace {
    Matrix token_table;  // pseudo-embeddings, one row per vocab entry
    Matrix head;         // fixed argmax head
    // conditional mode: a precomputed source side of length M = N
    std::vector<Vector> src_keys, src_values;
};

constexpr std::size_t kBenchVocab = 32;

DecodeWorkspace make_workspace(const DecodeBenchConfig& config, std::size_t source_len) {
    DecodeWorkspace ws;
    RngState rng = make_stream(config.seed, 5000);
    ws.token_table = seeded_normal_matrix(rng, kBenchVocab, config.d);
    ws.head = seeded_normal_matrix(rng, kBenchVocab, config.d);
    for (std::size_t i = 0; i < source_len; ++i) {
        const std::size_t tok = next_u64(rng) % kBenchVocab;
        const Vector x = l2_normalize(ws.token_table.row_vector(tok));
        ws.src_keys.push_back(x);
        ws.src_values.push_back(ws.token_table.row_vector(tok));
    }
    return ws;
}

std::size_t argmax_head(const Matrix& head, const Vector& h) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t r = 0; r < head.rows; ++r) {
        const double* row = head.row(r);
        double s = 0.0;
        for (std::size_t j = 0; j < h.size(); ++j) {
            s += row[j] * h[j];
        }
        if (s > best_score) {
            best_score = s;
            best = r;
        }
    }
    return best;
}

// One greedy decode of `length` steps for one sequence; appends per-step
// durations and returns the wall time of the whole run.
double decode_once(BenchKind kind, BenchMode mode, std::size_t length,
                   const DecodeBenchConfig& config, const DecodeWorkspace& ws,
                   const RealizedFeatureMap* map, std::vector<double>* step_seconds) {
    const std::size_t d = config.d;
    const AttentionConfig attn{AttentionKind::rfa, config.temperature, true, 1e-6};

    // softmax backend state: append-only flat caches of normalized keys and
    // raw values, preallocated so steps only touch contiguous memory
    Matrix cache_keys(kind == BenchKind::softmax ? length : 0, d);
    Matrix cache_values(kind == BenchKind::softmax ? length : 0, d);
    Vector scratch_logits(length, 0.0);
    Vector scratch_src(ws.src_keys.size(), 0.0);
    // random-feature backend state: (S, z), plus the cross-side state in
    // conditional mode
    const std::size_t fdim = map ? map->feature_dim() : 0;
    AttentionState state;
    AttentionState cross_state;
    if (map) {
        state = AttentionState::zero(fdim, d);
    }

    // Source-side precomputation (conditional mode): softmax keeps the raw
    // caches; the recurrence condenses the source into one (S, z).
    if (mode == BenchMode::conditional && map) {
        cross_state = AttentionState::zero(fdim, d);
        for (std::size_t i = 0; i < ws.src_keys.size(); ++i) {
            const Vector phi_k = apply_map(*map, ws.src_keys[i]);
            for (std::size_t f = 0; f < fdim; ++f) {
                const double pf = phi_k[f];
                double* row = cross_state.S.row(f);
                const double* v = ws.src_values[i].data();
                for (std::size_t j = 0; j < d; ++j) {
                    row[j] += pf * v[j];
                }
                cross_state.z[f] += pf;
            }
        }
    }

    std::size_t token = 0;
    double checksum = 0.0;
    const auto run_start = Clock::now();
    for (std::size_t t = 0; t < length; ++t) {
        const auto step_start = Clock::now();
        const Vector x = ws.token_table.row_vector(token % kBenchVocab);
        const Vector x_hat = l2_normalize(x);

        Vector h(d, 0.0);
        if (kind == BenchKind::softmax) {
            for (std::size_t j = 0; j < d; ++j) {
                cache_keys.at(t, j) = x_hat[j];
                cache_values.at(t, j) = x[j];
            }
            // causal attention over the cache: scaled dots, max-subtracted
            // softmax in a reused scratch buffer, then the weighted value sum
            const std::size_t live = t + 1;
            double max_logit = -1e300;
            for (std::size_t i = 0; i < live; ++i) {
                const double* krow = cache_keys.row(i);
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    s += x_hat[j] * krow[j];
                }
                s /= config.temperature;
                scratch_logits[i] = s;
                max_logit = std::max(max_logit, s);
            }
            double denom = 0.0;
            for (std::size_t i = 0; i < live; ++i) {
                scratch_logits[i] = std::exp(scratch_logits[i] - max_logit);
                denom += scratch_logits[i];
            }
            for (std::size_t i = 0; i < live; ++i) {
                const double wi = scratch_logits[i] / denom;
                const double* vrow = cache_values.row(i);
                for (std::size_t j = 0; j < d; ++j) {
                    h[j] += wi * vrow[j];
                }
            }
            if (mode == BenchMode::conditional) {
                const std::size_t m = ws.src_keys.size();
                double src_max = -1e300;
                for (std::size_t i = 0; i < m; ++i) {
                    double s = dot(x_hat, ws.src_keys[i]) / config.temperature;
                    scratch_src[i] = s;
                    src_max = std::max(src_max, s);
                }
                double src_denom = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    scratch_src[i] = std::exp(scratch_src[i] - src_max);
                    src_denom += scratch_src[i];
                }
                for (std::size_t i = 0; i < m; ++i) {
                    const double wi = scratch_src[i] / src_denom;
                    const Vector& v = ws.src_values[i];
                    for (std::size_t j = 0; j < d; ++j) {
                        h[j] += wi * v[j];
                    }
                }
            }
        } else {
            const Vector phi_k = apply_map(*map, x_hat);
            for (std::size_t f = 0; f < fdim; ++f) {
                const double pf = phi_k[f];
                double* row = state.S.row(f);
                for (std::size_t j = 0; j < d; ++j) {
                    row[j] += pf * x[j];
                }
                state.z[f] += pf;
            }
            const Vector phi_q = apply_map(*map, x_hat);
            const double u = clamp_denominator(dot(phi_q, state.z), attn.epsilon);
            h = rfa_readout(state.S, phi_q, u);
            if (mode == BenchMode::conditional) {
                const double uc = clamp_denominator(dot(phi_q, cross_state.z), attn.epsilon);
                const Vector hc = rfa_readout(cross_state.S, phi_q, uc);
                for (std::size_t j = 0; j < d; ++j) {
                    h[j] += hc[j];
                }
            }
        }

        token = argmax_head(ws.head, h);
        checksum += h[0];
        if (step_seconds) {
            step_seconds->push_back(seconds_since(step_start));
        }
    }
    g_bench_sink = checksum;
    return seconds_since(run_start);
}

}  // namespace

std::vector<DecodeBenchRecord> decode_bench(BenchKind kind, BenchMode mode,
                                            const std::vector<std::size_t>& lengths,
                                            std::size_t batch, const DecodeBenchConfig& config) {
    if (lengths.empty() || batch == 0) {
        throw std::invalid_argument("decode_bench: lengths and batch must be nonempty");
    }
    for (std::size_t i = 1; i < lengths.size(); ++i) {
        if (lengths[i] <= lengths[i - 1]) {
            throw std::invalid_argument("decode_bench: lengths must be ascending");
        }
    }

    RealizedFeatureMap map;
    const RealizedFeatureMap* map_ptr = nullptr;
    if (kind != BenchKind::softmax) {
        const FeatureMapKind fk =
            kind == BenchKind::rfa_gaussian ? FeatureMapKind::gaussian : FeatureMapKind::arccos;
        map = build_feature_map(FeatureMapSpec::make(fk, config.d, config.D, 1.0,
                                                     make_stream(config.seed, 5100).seed));
        map_ptr = &map;
    }

    std::vector<DecodeBenchRecord> records;
    records.reserve(lengths.size());
    for (std::size_t length : lengths) {
        const DecodeWorkspace ws =
            make_workspace(config, mode == BenchMode::conditional ? length : 0);
        for (std::size_t w = 0; w < config.warmup; ++w) {
            for (std::size_t b = 0; b < batch; ++b) {
                decode_once(kind, mode, length, config, ws, map_ptr, nullptr);
            }
        }
        std::vector<double> totals;
        std::vector<double> steps;
        steps.reserve(config.repetitions * length * batch);
        for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
            double total = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                total += decode_once(kind, mode, length, config, ws, map_ptr, &steps);
            }
            totals.push_back(total);
        }
        DecodeBenchRecord rec;
        rec.kind = kind;
        rec.mode = mode;
        rec.length = length;
        rec.batch = batch;
        rec.median_step_seconds = median(steps);
        rec.total_seconds = median(totals);
        rec.live_elements = live_element_count(kind, length, batch, config.d, config.D);
        rec.timer_flagged = rec.median_step_seconds < kTimerResolutionFloor;
        records.push_back(rec);
    }
    return records;
}

double fit_loglog_slope(const std::vector<std::size_t>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw std::invalid_argument("fit_loglog_slope: need at least two points");
    }
    const std::size_t n = xs.size();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(static_cast<double>(xs[i]));
        const double ly = std::log(ys[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = n * sxx - sx * sx;
    return (n * sxy - sx * sy) / denom;
}

void emit_csv(const std::vector<SweepRecord>& records, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << "D,seed,instance,mse_output,mse_kernel\n";
    for (const SweepRecord& r : records) {
        out << r.D << ',' << r.seed << ',' << r.instance << ',' << format_double(r.mse_output)
            << ',' << format_double(r.mse_kernel) << '\n';
    }
    finish_csv(out, path);
}

void emit_csv(const std::vector<DecodeBenchRecord>& records, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << "kind,mode,length,batch,median_step_seconds,total_seconds,live_elements,timer_flagged\n";
    for (const DecodeBenchRecord& r : records) {
        out << to_string(r.kind) << ',' << to_string(r.mode) << ',' << r.length << ',' << r.batch
            << ',' << format_double(r.median_step_seconds) << ',' << format_double(r.total_seconds)
            << ',' << r.live_elements << ',' << (r.timer_flagged ? 1 : 0) << '\n';
    }
    finish_csv(out, path);
}

void emit_csv(const std::vector<CurvePoint>& curve, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << "step,loss,accuracy\n";
    for (const CurvePoint& p : curve) {
        out << p.step << ',' << format_double(p.loss) << ',' << format_double(p.accuracy) << '\n';
    }
    finish_csv(out, path);
}

}  // namespace rfa

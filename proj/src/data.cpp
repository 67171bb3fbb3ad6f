#include "strep/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"

#include "strep/byteio.hpp"

namespace strep {

using nlohmann::json;

void SeriesTensor::validate() const {
    require(nodes > 0 && steps > 0 && features > 0, ErrorKind::Data, "series has an empty extent");
    require(values.size() == nodes * steps * features, ErrorKind::Data,
            "series value count " + std::to_string(values.size()) + " does not match N*T*C");
    require(steps_per_day > 0 && interval_seconds > 0 &&
                static_cast<long>(steps_per_day) * interval_seconds == 86400,
            ErrorKind::Data, "steps_per_day * interval_seconds must equal 86400");
    require(start_tod >= 0 && start_tod < steps_per_day, ErrorKind::Data, "start_tod out of range");
    require(start_dow >= 0 && start_dow < 7, ErrorKind::Data, "start_dow out of range");
    for (std::size_t i = 0; i < values.size(); ++i)
        require(std::isfinite(values[i]), ErrorKind::Data, "non-finite value at flat index " + std::to_string(i));
}

std::string sidecar_path(const std::string& path) { return path + ".json"; }

void save_container(const SeriesTensor& s, const std::string& path) {
    s.validate();
    require(s.features <= 0xFFFF && s.nodes <= 0xFFFFFFFFu && s.steps <= 0xFFFFFFFFu, ErrorKind::Data,
            "series too large for the container header");
    io::ByteWriter w;
    w.str("STRP");
    w.put<std::uint16_t>(kContainerVersion);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.features));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.nodes));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.steps));
    w.bytes(s.values.data(), s.values.size() * sizeof(float));
    io::write_file(path, w.buffer());

    json meta = {{"format", "STRP"},
                 {"version", kContainerVersion},
                 {"nodes", s.nodes},
                 {"steps", s.steps},
                 {"features", s.features},
                 {"steps_per_day", s.steps_per_day},
                 {"start_tod", s.start_tod},
                 {"start_dow", s.start_dow},
                 {"interval_seconds", s.interval_seconds}};
    io::write_text(sidecar_path(path), meta.dump(2) + "\n");
}

SeriesTensor load_container(const std::string& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes, "container " + path);
    require(r.str(4) == "STRP", ErrorKind::Data, "corrupt container " + path + ": bad magic");
    const auto version = r.get<std::uint16_t>();
    require(version == kContainerVersion, ErrorKind::Data,
            "container " + path + ": unsupported version " + std::to_string(version));
    SeriesTensor s;
    s.features = r.get<std::uint16_t>();
    s.nodes = r.get<std::uint32_t>();
    s.steps = r.get<std::uint32_t>();
    const std::size_t count = s.nodes * s.steps * s.features;
    require(r.remaining() == count * sizeof(float), ErrorKind::Data,
            "corrupt container " + path + ": payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
                std::to_string(count * sizeof(float)));
    s.values.resize(count);
    r.bytes(s.values.data(), count * sizeof(float));

    json meta;
    try {
        meta = json::parse(io::read_text(sidecar_path(path)));
        s.steps_per_day = meta.at("steps_per_day").get<int>();
        s.start_tod = meta.at("start_tod").get<int>();
        s.start_dow = meta.at("start_dow").get<int>();
        s.interval_seconds = meta.at("interval_seconds").get<int>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Data, "container sidecar " + sidecar_path(path) + ": " + e.what());
    }
    s.validate();
    return s;
}

SeriesTensor import_csv(const std::string& path, const CsvImportOptions& opts) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Data, "cannot open " + path);
    std::vector<std::vector<float>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<float> row;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const float v = std::stof(cell, &used);
                row.push_back(v);
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            require(rows.empty() && line_no == 1, ErrorKind::Data,
                    path + ":" + std::to_string(line_no) + ": non-numeric cell");
            continue;  // header
        }
        require(rows.empty() || row.size() == rows.front().size(), ErrorKind::Data,
                path + ":" + std::to_string(line_no) + ": ragged row");
        rows.push_back(std::move(row));
    }
    require(!rows.empty(), ErrorKind::Data, path + ": no data rows");

    SeriesTensor s;
    s.nodes = rows.front().size();
    s.steps = rows.size();
    s.features = 1;
    s.steps_per_day = opts.steps_per_day;
    s.interval_seconds = opts.steps_per_day > 0 ? 86400 / opts.steps_per_day : 0;
    s.start_tod = opts.start_tod;
    s.start_dow = opts.start_dow;
    s.values.resize(s.nodes * s.steps);
    for (std::size_t t = 0; t < s.steps; ++t)
        for (std::size_t n = 0; n < s.nodes; ++n) s.at(n, t) = rows[t][n];
    s.validate();
    return s;
}

NormStats zscore_fit(const SeriesTensor& s, Range train) {
    require(train.end <= s.steps && train.size() > 0, ErrorKind::Data, "zscore_fit: empty or out-of-range split");
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < s.nodes; ++n)
        for (std::size_t t = train.begin; t < train.end; ++t)
            for (std::size_t c = 0; c < s.features; ++c) {
                const double v = s.at(n, t, c);
                sum += v;
                ++count;
            }
    const double mean = sum / static_cast<double>(count);
    for (std::size_t n = 0; n < s.nodes; ++n)
        for (std::size_t t = train.begin; t < train.end; ++t)
            for (std::size_t c = 0; c < s.features; ++c) {
                const double d = s.at(n, t, c) - mean;
                sq += d * d;
            }
    const double sd = std::sqrt(sq / static_cast<double>(count));
    require(sd > 0.0, ErrorKind::Data, "zscore_fit: training split has zero variance");
    return {mean, sd};
}

SeriesTensor zscore_apply(const SeriesTensor& s, const NormStats& stats) {
    require(stats.std > 0.0, ErrorKind::Data, "zscore_apply: non-positive std");
    SeriesTensor out = s;
    for (auto& v : out.values) v = static_cast<float>((v - stats.mean) / stats.std);
    return out;
}

SeriesTensor zscore_invert(const SeriesTensor& s, const NormStats& stats) {
    SeriesTensor out = s;
    for (auto& v : out.values) v = static_cast<float>(v * stats.std + stats.mean);
    return out;
}

SplitSpec split_622(std::size_t total_steps, std::size_t min_length) {
    const std::size_t n_train = total_steps * 6 / 10;
    const std::size_t n_val = total_steps * 2 / 10;
    SplitSpec split{{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, total_steps}};
    require(split.train.size() >= min_length && split.val.size() >= min_length && split.test.size() >= min_length,
            ErrorKind::Data,
            "series of " + std::to_string(total_steps) + " steps is too short for windows of " +
                std::to_string(min_length) + " steps in every split");
    return split;
}

std::vector<std::size_t> window_starts(Range split, std::size_t T, std::size_t F, std::size_t stride) {
    require(stride >= 1, ErrorKind::Config, "window stride must be >= 1");
    std::vector<std::size_t> starts;
    if (split.size() < T + F) return starts;
    for (std::size_t s = split.begin; s + T + F <= split.end; s += stride) starts.push_back(s);
    return starts;
}

WindowSample make_window(const SeriesTensor& s, std::size_t start, std::size_t T, std::size_t F) {
    require(start + T + F <= s.steps, ErrorKind::Data, "window runs past the end of the series");
    const std::size_t N = s.nodes, C = s.features;
    WindowSample w;
    w.x_curr = Tensor<float>({N, T, C});
    w.x_tgt = Tensor<float>({N, F, C});
    for (std::size_t n = 0; n < N; ++n) {
        std::copy_n(&s.values[(n * s.steps + start) * C], T * C, w.x_curr.ptr() + n * T * C);
        if (F) std::copy_n(&s.values[(n * s.steps + start + T) * C], F * C, w.x_tgt.ptr() + n * F * C);
    }
    w.tod_idx.resize(T);
    w.dow_idx.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        w.tod_idx[t] = s.tod(start + t);
        w.dow_idx[t] = s.dow(start + t);
    }
    w.window_end = start + T - 1;
    return w;
}

WindowStream::WindowStream(const SeriesTensor& s, Range split, std::size_t T, std::size_t F, std::size_t stride)
    : series_(&s), starts_(window_starts(split, T, F, stride)), T_(T), F_(F) {}

std::optional<WindowSample> WindowStream::next() {
    if (cursor_ >= starts_.size()) return std::nullopt;
    return make_window(*series_, starts_[cursor_++], T_, F_);
}

SynthResult synth_generate(const SynthConfig& cfg) {
    require(cfg.nodes >= 2, ErrorKind::Config, "synth: need at least 2 nodes");
    require(cfg.days >= 2, ErrorKind::Config, "synth: need at least 2 days");
    require(cfg.steps_per_day > 0 && 86400 % cfg.steps_per_day == 0, ErrorKind::Config,
            "synth: steps_per_day must divide 86400");
    require(cfg.graph_degree >= 1 && cfg.graph_degree < cfg.nodes, ErrorKind::Config,
            "synth: graph_degree must lie in [1, N)");
    require(cfg.diffusion_weight >= 0.0 && cfg.diffusion_weight <= 1.0, ErrorKind::Config,
            "synth: diffusion_weight must lie in [0, 1]");
    require(cfg.noise_sigma >= 0.0 && std::abs(cfg.ar_coefficient) < 1.0, ErrorKind::Config,
            "synth: need noise_sigma >= 0 and |ar_coefficient| < 1");

    const std::size_t N = cfg.nodes;
    const std::size_t spd = static_cast<std::size_t>(cfg.steps_per_day);
    const std::size_t total = cfg.days * spd;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Random geometric graph: k nearest neighbours in the unit square, symmetrized.
    std::vector<double> px(N), py(N);
    for (std::size_t i = 0; i < N; ++i) {
        px[i] = unif(rng);
        py[i] = unif(rng);
    }
    std::vector<std::uint8_t> adj(N * N, 0);
    std::vector<std::size_t> order(N);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) order[j] = j;
        auto dist2 = [&](std::size_t j) { return (px[i] - px[j]) * (px[i] - px[j]) + (py[i] - py[j]) * (py[i] - py[j]); };
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist2(a) < dist2(b); });
        std::size_t added = 0;
        for (std::size_t j : order) {
            if (j == i) continue;
            adj[i * N + j] = adj[j * N + i] = 1;
            if (++added == cfg.graph_degree) break;
        }
    }
    std::vector<std::vector<std::size_t>> neighbours(N);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j)
            if (adj[i * N + j]) neighbours[i].push_back(j);

    std::vector<double> level(N), amp(N), phase(N);
    for (std::size_t i = 0; i < N; ++i) {
        level[i] = cfg.base_level * (0.8 + 0.4 * unif(rng));
        amp[i] = cfg.daily_amplitude * (0.7 + 0.6 * unif(rng));
        phase[i] = 0.2 * std::numbers::pi * unif(rng);
    }

    SynthResult out;
    SeriesTensor& s = out.series;
    s.nodes = N;
    s.steps = total;
    s.features = 1;
    s.steps_per_day = cfg.steps_per_day;
    s.interval_seconds = 86400 / cfg.steps_per_day;
    s.values.resize(N * total);
    out.noise = Tensor<float>({N, total});

    std::vector<double> z(N, 0.0), next(N);
    // Burn in the AR state so the first day is already stationary.
    const std::size_t burn = spd;
    for (std::size_t t = 0; t < burn + total; ++t) {
        for (std::size_t i = 0; i < N; ++i) {
            double nb = 0.0;
            for (auto j : neighbours[i]) nb += z[j];
            nb /= static_cast<double>(neighbours[i].size());
            const double mixed = (1.0 - cfg.diffusion_weight) * z[i] + cfg.diffusion_weight * nb;
            next[i] = cfg.ar_coefficient * mixed + cfg.noise_sigma * gauss(rng);
        }
        z.swap(next);
        if (t < burn) continue;
        const std::size_t step = t - burn;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(s.tod(step)) / static_cast<double>(spd);
        const double week = 1.0 + cfg.weekly_modulation * std::cos(2.0 * std::numbers::pi * s.dow(step) / 7.0);
        for (std::size_t i = 0; i < N; ++i) {
            out.noise[i * total + step] = static_cast<float>(z[i]);
            s.at(i, step) = static_cast<float>(level[i] + amp[i] * week * std::sin(angle + phase[i]) + z[i]);
        }
    }
    out.adjacency = std::move(adj);
    s.validate();
    return out;
}

CvResult compute_cv(const SeriesTensor& s) {
    CvResult res;
    double acc = 0.0;
    std::size_t kept = 0;
    for (std::size_t n = 0; n < s.nodes; ++n)
        for (std::size_t c = 0; c < s.features; ++c) {
            double mean = 0.0, sq = 0.0;
            for (std::size_t t = 0; t < s.steps; ++t) mean += s.at(n, t, c);
            mean /= static_cast<double>(s.steps);
            for (std::size_t t = 0; t < s.steps; ++t) sq += (s.at(n, t, c) - mean) * (s.at(n, t, c) - mean);
            const double sd = std::sqrt(sq / static_cast<double>(s.steps));
            if (mean == 0.0) {
                res.excluded.push_back(n * s.features + c);
                continue;
            }
            acc += 100.0 * sd / mean;
            ++kept;
        }
    res.cv_percent = kept ? acc / static_cast<double>(kept) : 0.0;
    return res;
}

namespace {

double variance(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

// 1 - Var(R)/Var(X+R), clamped to [0,1]; a degenerate denominator means no such component.
double strength(const std::vector<double>& remainder, const std::vector<double>& with_component) {
    const double denom = variance(with_component);
    if (denom <= 1e-12 * (1.0 + variance(remainder))) return 0.0;
    return std::clamp(1.0 - variance(remainder) / denom, 0.0, 1.0);
}

}  // namespace

StrengthResult series_strength(std::span<const double> x, std::size_t period) {
    const std::size_t n = x.size();
    require(period >= 2 && n >= 2 * period, ErrorKind::Data,
            "trend/seasonality strength needs at least two periods of data");
    // Centered moving average; 2 x period for even periods.
    const std::size_t half = period / 2;
    std::vector<double> trend(n, 0.0);
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
    const std::size_t lo = half, hi = n - half;  // trend defined on [lo, hi)
    for (std::size_t t = lo; t < hi; ++t) {
        if (period % 2 == 1) {
            trend[t] = (prefix[t + half + 1] - prefix[t - half]) / static_cast<double>(period);
        } else {
            const double inner = prefix[t + half] - prefix[t - half + 1];
            trend[t] = (inner + 0.5 * (x[t - half] + x[t + half])) / static_cast<double>(period);
        }
    }
    std::vector<double> phase_sum(period, 0.0);
    std::vector<std::size_t> phase_count(period, 0);
    for (std::size_t t = lo; t < hi; ++t) {
        phase_sum[t % period] += x[t] - trend[t];
        ++phase_count[t % period];
    }
    std::vector<double> seasonal(period, 0.0);
    double centre = 0.0;
    for (std::size_t p = 0; p < period; ++p) {
        seasonal[p] = phase_count[p] ? phase_sum[p] / static_cast<double>(phase_count[p]) : 0.0;
        centre += seasonal[p];
    }
    centre /= static_cast<double>(period);
    for (auto& v : seasonal) v -= centre;

    std::vector<double> rem, trend_rem, season_rem;
    for (std::size_t t = lo; t < hi; ++t) {
        const double r = x[t] - trend[t] - seasonal[t % period];
        rem.push_back(r);
        trend_rem.push_back(trend[t] + r);
        season_rem.push_back(seasonal[t % period] + r);
    }
    return {strength(rem, trend_rem), strength(rem, season_rem)};
}

StrengthResult trend_seasonality_strength(const SeriesTensor& s, std::size_t period) {
    StrengthResult acc;
    std::vector<double> buf(s.steps);
    for (std::size_t n = 0; n < s.nodes; ++n)
        for (std::size_t c = 0; c < s.features; ++c) {
            for (std::size_t t = 0; t < s.steps; ++t) buf[t] = s.at(n, t, c);
            const auto r = series_strength(buf, period);
            acc.trend += r.trend;
            acc.seasonality += r.seasonality;
        }
    const double vars = static_cast<double>(s.nodes * s.features);
    return {acc.trend / vars, acc.seasonality / vars};
}

}  // namespace strep

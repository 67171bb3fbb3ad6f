#include "strep/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "strep/byteio.hpp"

namespace strep {

using nlohmann::json;
namespace fs = std::filesystem;

// --- configuration -------------------------------------------------------------

json synth_to_json(const SynthConfig& c) {
    return {{"nodes", c.nodes},
            {"days", c.days},
            {"steps_per_day", c.steps_per_day},
            {"graph_degree", c.graph_degree},
            {"diffusion_weight", c.diffusion_weight},
            {"noise_sigma", c.noise_sigma},
            {"ar_coefficient", c.ar_coefficient},
            {"base_level", c.base_level},
            {"daily_amplitude", c.daily_amplitude},
            {"weekly_modulation", c.weekly_modulation},
            {"seed", c.seed}};
}

SynthConfig synth_from_json(const json& j) {
    SynthConfig c;
    try {
        c.nodes = j.at("nodes");
        c.days = j.at("days");
        c.steps_per_day = j.at("steps_per_day");
        c.graph_degree = j.at("graph_degree");
        c.diffusion_weight = j.at("diffusion_weight");
        c.noise_sigma = j.at("noise_sigma");
        c.ar_coefficient = j.at("ar_coefficient");
        c.base_level = j.at("base_level");
        c.daily_amplitude = j.at("daily_amplitude");
        c.weekly_modulation = j.at("weekly_modulation");
        c.seed = j.at("seed");
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("data config: ") + e.what());
    }
    return c;
}

namespace {

// train section: optimizer keys and loss keys side by side
json train_section(const TrainConfig& t) {
    json j = t.to_json();
    json flat = t.loss.to_json();
    for (auto& [k, v] : j.items())
        if (k != "model" && k != "loss") flat[k] = v;
    return flat;
}

TrainConfig train_from_sections(const json& train, const json& model) {
    json loss = json::object(), rest = json::object();
    const json loss_keys = LossConfig{}.to_json();
    for (auto& [k, v] : train.items()) (loss_keys.contains(k) ? loss : rest)[k] = v;
    rest["loss"] = loss;
    rest["model"] = model;
    return TrainConfig::from_json(rest);
}

json bench_section(const BenchConfig& b) {
    return {{"nodes", b.nodes},
            {"batch", b.batch},
            {"repeats", b.repeats},
            {"warmup", b.warmup},
            {"min_seconds", b.min_seconds},
            {"seed", b.seed}};
}

std::string type_name(const json& v) {
    if (v.is_boolean()) return "boolean";
    if (v.is_number_unsigned()) return "unsigned";
    if (v.is_number_integer()) return "integer";
    if (v.is_number()) return "number";
    if (v.is_string()) return "string";
    if (v.is_array()) return "array<" + (v.empty() ? std::string("number") : type_name(v.front())) + ">";
    return "object";
}

bool matches(const std::string& type, const json& v) {
    if (type == "boolean") return v.is_boolean();
    if (type == "unsigned") return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    if (type == "integer") return v.is_number_integer();
    if (type == "number") return v.is_number();
    if (type == "string") return v.is_string();
    if (type.rfind("array<", 0) == 0) {
        if (!v.is_array()) return false;
        const auto inner = type.substr(6, type.size() - 7);
        for (const auto& e : v)
            if (!matches(inner, e)) return false;
        return true;
    }
    return false;
}

RunConfig defaults() {
    RunConfig c;
    c.train.model.nodes = 0;
    c.train.model.steps_per_day = 0;
    return c;
}

json sections(const RunConfig& c) {
    return {{"data", synth_to_json(c.data)},
            {"model", c.train.model.to_json()},
            {"train", train_section(c.train)},
            {"eval", c.eval.to_json()},
            {"bench", bench_section(c.bench)}};
}

}  // namespace

json RunConfig::to_json() const { return sections(*this); }

json run_config_schema() {
    json schema = json::object();
    const json all = sections(defaults());
    for (auto& [section, body] : all.items())
        for (auto& [key, value] : body.items()) schema[section][key] = type_name(value);
    schema["seed"] = "unsigned";
    return schema;
}

RunConfig RunConfig::from_json(const json& doc) {
    require(doc.is_object(), ErrorKind::Config, "run config must be a JSON object");
    const json schema = run_config_schema();
    json merged = sections(defaults());
    for (auto& [section, body] : doc.items()) {
        require(schema.contains(section), ErrorKind::Config, "run config: unknown section '" + section + "'");
        if (section == "seed") {
            require(matches("unsigned", body), ErrorKind::Config, "run config: seed must be a non-negative integer");
            continue;
        }
        require(body.is_object(), ErrorKind::Config, "run config: section '" + section + "' must be an object");
        for (auto& [key, value] : body.items()) {
            require(schema[section].contains(key), ErrorKind::Config,
                    "run config: unknown key '" + section + "." + key + "'");
            const std::string type = schema[section][key];
            require(matches(type, value), ErrorKind::Config,
                    "run config: '" + section + "." + key + "' must be " + type + ", got " + value.dump());
            merged[section][key] = value;
        }
    }
    RunConfig c;
    c.data = synth_from_json(merged["data"]);
    c.train = train_from_sections(merged["train"], merged["model"]);
    c.eval = EvalConfig::from_json(merged["eval"]);
    const auto& b = merged["bench"];
    try {
        c.bench.nodes = b.at("nodes").get<std::vector<std::size_t>>();
        c.bench.batch = b.at("batch");
        c.bench.repeats = b.at("repeats");
        c.bench.warmup = b.at("warmup");
        c.bench.min_seconds = b.at("min_seconds");
        c.bench.seed = b.at("seed");
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("bench config: ") + e.what());
    }
    if (doc.contains("seed")) c.set_seed(doc["seed"].get<std::uint64_t>());
    return c;
}

void RunConfig::set_seed(std::uint64_t seed) {
    data.seed = seed;
    train.seed = seed;
    eval.seed = seed;
    bench.seed = seed;
}

RunConfig load_run_config(const std::string& path) {
    require(fs::exists(path), ErrorKind::Config, "config file " + path + " does not exist");
    json doc;
    try {
        doc = json::parse(io::read_text(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, "config file " + path + ": " + e.what());
    }
    return RunConfig::from_json(doc);
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Data:
            return 3;
        case ErrorKind::Numeric:
            return 4;
        default:
            return 2;
    }
}

// --- commands --------------------------------------------------------------------

namespace {

struct Options {
    std::string config, data, out, checkpoint, horizons, variants, n_list;
    std::uint64_t seed = 0;
    bool seed_set = false, force = false;
    double fraction = 0;
    bool fraction_set = false;
};

std::vector<std::size_t> parse_list(const std::string& text, const std::string& flag) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        require(!item.empty() && item.find_first_not_of("0123456789") == std::string::npos, ErrorKind::Config,
                flag + ": '" + text + "' is not a comma-separated list of positive integers");
        out.push_back(std::stoull(item));
        require(out.back() > 0, ErrorKind::Config, flag + ": values must be positive");
    }
    require(!out.empty(), ErrorKind::Config, flag + ": empty list");
    return out;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::size_t env_workers() {
    const char* w = std::getenv("STREP_WORKERS");
    if (!w || !*w) return 1;
    char* end = nullptr;
    const long v = std::strtol(w, &end, 10);
    require(*end == '\0' && v >= 1, ErrorKind::Config, std::string("STREP_WORKERS must be a positive integer, got '") + w + "'");
    return static_cast<std::size_t>(v);
}

fs::path output_dir(const Options& o, const std::string& command) {
    const char* root = std::getenv("STREP_OUT_ROOT");
    const fs::path base = (root && *root) ? fs::path(root) : fs::path("runs");
    if (o.out.empty()) return base / command;
    const fs::path p(o.out);
    return (p.is_relative() && root && *root) ? base / p : p;
}

// Holds <dir>/.lock for the lifetime of a command.
class RunDir {
   public:
    RunDir(fs::path dir, const std::vector<std::string>& outputs, bool force) : dir_(std::move(dir)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        require(!ec, ErrorKind::Config, "cannot create output directory " + dir_.string() + ": " + ec.message());
        lock_ = dir_ / ".lock";
        const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        require(fd >= 0, ErrorKind::Config,
                "output directory " + dir_.string() + " is locked by another run (remove " + lock_.string() +
                    " if stale)");
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        held_ = true;
        for (const auto& f : outputs)
            if (fs::exists(dir_ / f) && !force) {
                release();
                fail(ErrorKind::Config, "refusing to overwrite " + (dir_ / f).string() + " (pass --force)");
            }
    }
    ~RunDir() { release(); }
    RunDir(const RunDir&) = delete;
    RunDir& operator=(const RunDir&) = delete;

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

   private:
    void release() {
        if (held_) {
            std::error_code ec;
            fs::remove(lock_, ec);
            held_ = false;
        }
    }
    fs::path dir_, lock_;
    bool held_ = false;
};

RunConfig session_config(const Options& o) {
    RunConfig c = o.config.empty() ? RunConfig::from_json(json::object()) : load_run_config(o.config);
    if (o.seed_set) c.set_seed(o.seed);
    if (!o.horizons.empty()) c.eval.horizons = parse_list(o.horizons, "--horizons");
    if (o.fraction_set) c.eval.fraction = o.fraction;
    if (!o.n_list.empty()) c.bench.nodes = parse_list(o.n_list, "--n-list");
    return c;
}

void echo_config(const RunDir& dir, const std::string& command, const RunConfig& c, const json& inputs) {
    json doc = {{"command", command}, {"config", c.to_json()}, {"inputs", inputs}};
    io::write_text(dir.path("config.json"), doc.dump(2) + "\n");
}

std::string need_file(const std::string& path, const std::string& flag) {
    require(!path.empty(), ErrorKind::Config, flag + " is required");
    require(fs::exists(path), ErrorKind::Config, flag + " " + path + " does not exist");
    return path;
}

SeriesTensor load_data(const Options& o) { return load_container(need_file(o.data, "--data")); }

// With an explicit config file, the checkpoint must have been trained with the same model section.
Checkpoint load_model(const Options& o, const RunConfig& c, const SeriesTensor& data) {
    const auto path = need_file(o.checkpoint, "--checkpoint");
    if (o.config.empty()) return load_checkpoint(path);
    const auto expected = resolve_config(c.train, data).model;
    return load_checkpoint(path, &expected);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

int cmd_generate(const Options& o, std::ostream& out) {
    const auto c = session_config(o);
    RunDir dir(output_dir(o, "generate"), {"data.strp", "stats.json"}, o.force);
    const auto synth = synth_generate(c.data);
    save_container(synth.series, dir.path("data.strp"));
    const auto cv = compute_cv(synth.series);
    const auto st = trend_seasonality_strength(synth.series, static_cast<std::size_t>(synth.series.steps_per_day));
    io::write_text(dir.path("stats.json"), json{{"nodes", synth.series.nodes},
                                                {"steps", synth.series.steps},
                                                {"interval_seconds", synth.series.interval_seconds},
                                                {"cv_percent", cv.cv_percent},
                                                {"trend_strength", st.trend},
                                                {"seasonality_strength", st.seasonality}}
                                                   .dump(2) + "\n");
    echo_config(dir, "generate", c, json::object());
    out << "wrote " << dir.path("data.strp") << ": " << synth.series.nodes << " nodes x " << synth.series.steps
        << " steps, interval " << synth.series.interval_seconds << " s\n";
    out << "CV " << fmt("%.2f", cv.cv_percent) << "  (PEMS04 58.82, PEMS08 46.75, SDWPF 121.97, Temperature 2.19)\n";
    out << "trend strength " << fmt("%.4f", st.trend) << ", seasonality strength " << fmt("%.4f", st.seasonality)
        << "  (PEMS04 0.4315 / 0.9827, PEMS08 0.4630 / 0.9813)\n";
    return 0;
}

int cmd_pretrain(const Options& o, std::ostream& out) {
    const auto c = session_config(o);
    const auto data = load_data(o);
    RunDir dir(output_dir(o, "pretrain"), {"model.ckpt", "train_log.csv", "history.json"}, o.force);
    auto res = pretrain(data, c.train, [&](const EpochRecord& e) {
        out << "epoch " << e.epoch << "  train " << fmt("%.6f", e.train.total) << "  val " << fmt("%.6f", e.val_total)
            << "  (" << fmt("%.1f", e.wall_seconds) << " s)\n"
            << std::flush;
    });
    save_checkpoint(res.checkpoint, dir.path("model.ckpt"));
    io::write_text(dir.path("train_log.csv"), res.history.csv());
    json epochs = json::array();
    for (const auto& e : res.history.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"L_recon", e.train.recon},
                          {"L_pred", e.train.pred},
                          {"L_MS", e.train.ms},
                          {"total", e.train.total},
                          {"val_total", e.val_total}});
    io::write_text(dir.path("history.json"), json{{"best_epoch", res.history.best_epoch},
                                                  {"best_val", res.history.best_val},
                                                  {"early_stopped", res.history.early_stopped},
                                                  {"epochs", epochs}}
                                                 .dump(2) + "\n");
    echo_config(dir, "pretrain", c, {{"data", o.data}});
    out << "best epoch " << res.history.best_epoch << " (val " << fmt("%.6f", res.history.best_val) << "), wrote "
        << dir.path("model.ckpt") << "\n";
    return 0;
}

int cmd_encode(const Options& o, std::ostream& out) {
    const auto c = session_config(o);
    const auto data = load_data(o);
    const auto ck = load_model(o, c, data);
    RunDir dir(output_dir(o, "encode"), {"reps_train.strc", "reps_val.strc", "reps_test.strc"}, o.force);
    const auto m = ck.config.model;
    const auto split = split_622(data.steps, m.input_len + m.horizon);
    const auto stores = encode_splits(ck, data, split, env_workers());
    save_store(stores.train, dir.path("reps_train.strc"));
    save_store(stores.val, dir.path("reps_val.strc"));
    save_store(stores.test, dir.path("reps_test.strc"));
    echo_config(dir, "encode", c, {{"data", o.data}, {"checkpoint", o.checkpoint}});
    out << "encoded " << stores.train.size() << "/" << stores.val.size() << "/" << stores.test.size()
        << " windows (train/val/test) of " << m.nodes << " x " << m.width << "\n";
    return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
    const auto c = session_config(o);
    const auto data = load_data(o);
    const auto ck = load_model(o, c, data);
    RunDir dir(output_dir(o, "eval"), {"report.csv", "report.json"}, o.force);
    const auto m = ck.config.model;
    const auto split = split_622(data.steps, m.input_len + m.horizon);
    const auto report = evaluate_protocol(ck, encode_splits(ck, data, split, env_workers()), data, split, c.eval);
    write_report(report, dir.path(""));
    echo_config(dir, "eval", c, {{"data", o.data}, {"checkpoint", o.checkpoint}});
    out << report.csv();
    return 0;
}

int cmd_bench(const Options& o, std::ostream& out) {
    auto c = session_config(o);
    RunDir dir(output_dir(o, "bench"), {"scaling.csv", "scaling.json"}, o.force);
    auto bc = c.bench;
    bc.model = c.train.model;
    if (bc.model.steps_per_day == 0) bc.model.steps_per_day = 288;
    const auto r = complexity_bench(bc);
    io::write_text(dir.path("scaling.csv"), r.csv());
    io::write_text(dir.path("scaling.json"), r.to_json().dump(2) + "\n");
    echo_config(dir, "bench", c, json::object());
    out << r.csv() << "log-log slope: encoder fwd " << fmt("%.3f", r.slope_fwd) << ", fwd+bwd "
        << fmt("%.3f", r.slope_fwd_bwd) << "; all-pairs reference fwd " << fmt("%.3f", r.naive_slope_fwd)
        << ", fwd+bwd " << fmt("%.3f", r.naive_slope_fwd_bwd) << "\n";
    return 0;
}

int cmd_ablate(const Options& o, std::ostream& out) {
    const auto c = session_config(o);
    const auto data = load_data(o);
    const auto variants = o.variants.empty() ? ablation_variants() : split_words(o.variants);
    RunDir dir(output_dir(o, "ablate"), {"ablation.csv", "ablation.json"}, o.force);
    const auto r = ablation_run(
        data, c.train, c.eval, nullptr,
        [&](const std::string& v, const PretrainResult& run) {
            out << v << ": " << run.history.epochs.size() << " epochs, best val " << fmt("%.6f", run.history.best_val)
                << "\n"
                << std::flush;
        },
        variants);
    io::write_text(dir.path("ablation.csv"), r.csv());
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"variant", row.variant},
                        {"best_epoch", row.history.best_epoch},
                        {"best_val", row.history.best_val},
                        {"report", row.report.to_json()}});
    io::write_text(dir.path("ablation.json"), json{{"variants", rows}}.dump(2) + "\n");
    echo_config(dir, "ablate", c, {{"data", o.data}});
    out << r.csv();
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spatiotemporal representation learning toolkit", args.empty() ? "strep" : args[0]};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON run configuration");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--seed", o.seed, "seed for every random stream")->each([&](const std::string&) { o.seed_set = true; });
        sub->add_flag("--force", o.force, "overwrite existing outputs");
    };
    auto* gen = app.add_subcommand("generate", "write a synthetic dataset container");
    common(gen);
    auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
    common(pre);
    pre->add_option("--data", o.data, "dataset container")->required();
    auto* enc = app.add_subcommand("encode", "representation stores for every split");
    common(enc);
    enc->add_option("--data", o.data, "dataset container")->required();
    enc->add_option("--checkpoint", o.checkpoint, "pretrained checkpoint")->required();
    auto* ev = app.add_subcommand("eval", "ridge evaluation against HL and raw-ridge baselines");
    common(ev);
    ev->add_option("--data", o.data, "dataset container")->required();
    ev->add_option("--checkpoint", o.checkpoint, "pretrained checkpoint")->required();
    for (auto* sub : {ev}) {
        sub->add_option("--horizons", o.horizons, "comma-separated forecast horizons");
        sub->add_option("--fraction", o.fraction, "share of training rows used by ridge")
            ->each([&](const std::string&) { o.fraction_set = true; });
    }
    auto* be = app.add_subcommand("bench", "encoder runtime scaling in the node count");
    common(be);
    be->add_option("--n-list", o.n_list, "comma-separated node counts");
    auto* ab = app.add_subcommand("ablate", "train and evaluate the ablation variants");
    common(ab);
    ab->add_option("--data", o.data, "dataset container")->required();
    ab->add_option("--variants", o.variants, "comma-separated subset of full,no_encoder,no_pred,no_recon,no_ms");
    ab->add_option("--horizons", o.horizons, "comma-separated forecast horizons");
    ab->add_option("--fraction", o.fraction, "share of training rows used by ridge")
        ->each([&](const std::string&) { o.fraction_set = true; });

    std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(rev.begin(), rev.end());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen) return cmd_generate(o, out);
        if (*pre) return cmd_pretrain(o, out);
        if (*enc) return cmd_encode(o, out);
        if (*ev) return cmd_eval(o, out);
        if (*be) return cmd_bench(o, out);
        if (*ab) return cmd_ablate(o, out);
    } catch (const Error& e) {
        static const char* names[] = {"config", "data", "shape", "numeric", "state"};
        const int code = exit_code(e.kind());
        err << json{{"error", {{"kind", names[static_cast<int>(e.kind())]}, {"message", e.what()}, {"exit_code", code}}}}
                   .dump()
            << "\n";
        return code;
    } catch (const std::exception& e) {
        err << json{{"error", {{"kind", "internal"}, {"message", e.what()}, {"exit_code", 2}}}}.dump() << "\n";
        return 2;
    }
    return 2;
}

}  // namespace strep

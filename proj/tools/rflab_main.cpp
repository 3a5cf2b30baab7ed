// rflab: batch CLI for the Bluetooth RF-fingerprinting lab - synthetic
// dataset simulation, feature extraction from captures, two-stage Mbed-ATN
// training, KPI evaluation, and analytic complexity reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rflab/complexity.hpp"
#include "rflab/dataset.hpp"
#include "rflab/evalkit.hpp"
#include "rflab/model_json.hpp"
#include "rflab/runtime.hpp"
#include "rflab/trainer.hpp"

namespace fs = std::filesystem;
using namespace rflab;

namespace {

void write_run_json(const std::string& dir, const json& j) {
    fs::create_directories(dir);
    jsonutil::save_json_file(dir + "/run.json", j);
}

DecimMode parse_mode(const std::string& s) {
    if (s == "aa") return DecimMode::anti_aliased;
    if (s == "plain") return DecimMode::plain;
    throw ArgumentError("mode must be 'plain' or 'aa', got '" + s + "'");
}

FeatureFormat parse_format(const std::string& s) {
    if (s == "eq2") return FeatureFormat::mag_phase_psd;
    if (s == "raw-iq") return FeatureFormat::raw_iq;
    throw ArgumentError("format must be 'eq2' or 'raw-iq', got '" + s + "'");
}

TrainConfig train_config_from_json(const json& j, const std::string& where) {
    TrainConfig cfg;
    cfg.lr = j.value("lr", 1e-4);
    cfg.max_epochs = j.value("max_epochs", 2000);
    cfg.batch_size = j.value("batch_size", 16);
    cfg.seed = j.value("seed", std::uint64_t(1));
    cfg.patience = j.value("patience", 25);
    cfg.min_delta = j.value("min_delta", 1e-6);
    try {
        cfg.validate();
    } catch (const ArgumentError& e) {
        throw FormatError(where + ": " + e.what());
    }
    return cfg;
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"lr", c.lr},     {"max_epochs", c.max_epochs}, {"batch_size", c.batch_size},
                {"seed", c.seed}, {"patience", c.patience},     {"min_delta", c.min_delta}};
}

json run_record_to_json(const RunRecord& r) {
    json j{{"epochs", r.rows.size()},
           {"stop_reason", r.stop_reason},
           {"best_epoch", r.best_epoch},
           {"best_val_loss", r.best_val_loss},
           {"best_val_acc", r.best_val_acc},
           {"workers", r.workers},
           {"params_checksum", r.params_checksum}};
    if (r.frozen_checksum_before || r.frozen_checksum_after) {
        j["frozen_checksum_before"] = r.frozen_checksum_before;
        j["frozen_checksum_after"] = r.frozen_checksum_after;
        j["frozen_unchanged"] = r.frozen_checksum_before == r.frozen_checksum_after;
    }
    return j;
}

int cmd_simulate(const std::string& profiles_path, const std::string& hops_path, const std::string& channels_path,
                 std::size_t n, std::size_t n_ttd, std::size_t m, std::size_t factor, double fs,
                 const std::string& mode, const std::string& format, std::uint64_t seed, const std::string& out) {
    DatasetConfig cfg;
    for (const auto& p : jsonutil::load_json_file(profiles_path))
        cfg.profiles.push_back(profile_from_json(p, profiles_path));
    cfg.hops = hops_from_json(jsonutil::load_json_file(hops_path), hops_path);
    const json ch = jsonutil::load_json_file(channels_path);
    cfg.train_channel = channel_from_json(jsonutil::require(ch, "train", channels_path), channels_path + ".train");
    cfg.test_channel = channel_from_json(jsonutil::require(ch, "test", channels_path), channels_path + ".test");
    cfg.n_per_class = n;
    cfg.n_ttd_per_class = n_ttd;
    cfg.m = m;
    cfg.factor = factor;
    cfg.fs_hz = fs;
    cfg.mode = parse_mode(mode);
    cfg.format = parse_format(format);
    cfg.master_seed = seed;

    generate_dataset_files(cfg, out, worker_count());
    json run = dataset_config_to_json(cfg);
    run["command"] = "simulate";
    run["out"] = out;
    run["workers"] = worker_count();
    write_run_json(out, run);
    std::cout << "wrote " << cfg.profiles.size() * (n + n_ttd) << " examples to " << out << "/manifest.json\n";
    return 0;
}

int cmd_features(const std::string& capture, const std::string& descriptor, std::size_t m, const std::string& mode,
                 const std::string& format, const std::string& out) {
    const json d = jsonutil::load_json_file(descriptor);
    FormatDescriptor desc;
    const std::string scalar = d.value("scalar", "f32");
    if (scalar == "f32") desc.scalar = SampleScalar::f32;
    else if (scalar == "s16") desc.scalar = SampleScalar::s16;
    else throw FormatError(descriptor + ": field 'scalar' must be 'f32' or 's16'");
    desc.sample_rate_hz = jsonutil::require(d, "sample_rate_hz", descriptor).get<double>();
    desc.center_freq_hz = d.value("center_freq_hz", 0.0);
    desc.full_scale = d.value("full_scale", 1.0);

    const ComplexSeries x = read_capture(capture, desc);
    const DecimMode dm = parse_mode(mode);
    const FeatureTensor t = parse_format(format) == FeatureFormat::mag_phase_psd
                                ? build_feature_tensor(x, m, dm)
                                : build_raw_iq_tensor(x, m, dm);
    write_feature_tensor(out, t);
    std::cout << "wrote " << t.rows << "x" << t.m << " tensor to " << out << " (factor " << x.iq.size() / m
              << ")\n";
    return 0;
}

struct LoadedDataset {
    Dataset ds;
    std::vector<int> labels;
    SplitIndices split;
    std::vector<std::size_t> ttd;
    int num_classes = 0;
    int in_channels = 0;
};

LoadedDataset load_for_run(const std::string& manifest_path) {
    LoadedDataset ld;
    ld.ds = load_dataset(read_manifest(manifest_path));
    ld.labels.reserve(ld.ds.examples.size());
    for (const auto& e : ld.ds.examples) ld.labels.push_back(e.label);
    ld.split = split_by_id(ld.ds.examples);
    for (std::size_t i = 0; i < ld.ds.examples.size(); ++i)
        if (ld.ds.examples[i].regime == Regime::ttd) ld.ttd.push_back(i);
    ld.num_classes = static_cast<int>(ld.ds.config.profiles.size());
    ld.in_channels = ld.ds.config.format == FeatureFormat::mag_phase_psd ? 3 : 2;
    return ld;
}

template <typename T>
int run_train(const LoadedDataset& ld, double scale, const std::string& stage, const TrainConfig& cfg,
              int gru_chunk, const std::string& out) {
    const std::size_t m = ld.ds.config.m;
    fs::create_directories(out);

    const ModelGraph full_graph = build_mbed_atn(m, scale, ld.num_classes, ld.in_channels, gru_chunk);
    jsonutil::save_json_file(out + "/graph.json", to_json(full_graph));

    std::vector<Tensor<T>> inputs;
    Model<T> full(full_graph);
    inputs.reserve(ld.ds.examples.size());
    for (const auto& e : ld.ds.examples) inputs.push_back(full.input_from(e.x));

    json summary;
    if (stage == "one" || stage == "both") {
        Model<T> mbed_model(build_mbed_only(m, scale, ld.num_classes, ld.in_channels));
        mbed_model.init_params(Rng(cfg.seed));
        RunRecord rec = train_stage1(mbed_model, inputs, ld.labels, ld.split, cfg);
        rec.write_csv(out + "/stage1.csv");
        mbed_model.save_params(out + "/mbed.params", "mbed.");
        mbed_model.save_params(out + "/temp_head.params", "temp_head.");
        summary["stage1"] = run_record_to_json(rec);
        std::cout << "stage1: " << rec.rows.size() << " epochs, best val acc " << rec.best_val_acc << " ("
                  << rec.stop_reason << ")\n";
    }
    if (stage == "two" || stage == "both") {
        if (!fs::exists(out + "/mbed.params"))
            throw IoError("stage two needs " + out + "/mbed.params from stage one");
        full.init_params(Rng(Rng::mix(cfg.seed, 0x41544EULL)));
        full.load_params(out + "/mbed.params");
        RunRecord rec = train_stage2(full, inputs, ld.labels, ld.split, cfg);
        rec.write_csv(out + "/stage2.csv");
        full.save_params(out + "/atn.params", "atn.");
        full.save_params(out + "/mbed.params", "mbed."); // byte-identical to stage one by the freeze invariant
        summary["stage2"] = run_record_to_json(rec);
        std::cout << "stage2: " << rec.rows.size() << " epochs, best val acc " << rec.best_val_acc << " ("
                  << rec.stop_reason << "), mbed frozen: "
                  << (rec.frozen_checksum_before == rec.frozen_checksum_after ? "yes" : "NO") << "\n";
    }
    jsonutil::save_json_file(out + "/summary.json", summary);
    return 0;
}

int cmd_train(const std::string& dataset, const std::string& model, double scale, const std::string& stage,
              const std::string& config_path, const std::string& precision, int gru_chunk, const std::string& out) {
    if (model != "mbed-atn") throw ArgumentError("unknown model '" + model + "' (expected 'mbed-atn')");
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : train_config_from_json(jsonutil::load_json_file(config_path), config_path);

    const LoadedDataset ld = load_for_run(dataset);
    json run{{"command", "train"},   {"dataset", dataset}, {"model", model},
             {"scale", scale},       {"stage", stage},     {"precision", precision},
             {"gru_chunk", gru_chunk}, {"config", train_config_to_json(cfg)},
             {"workers", worker_count()}, {"standardized_features", true}};
    write_run_json(out, run);

    if (precision == "f64") return run_train<double>(ld, scale, stage, cfg, gru_chunk, out);
    if (precision == "f32") return run_train<float>(ld, scale, stage, cfg, gru_chunk, out);
    throw ArgumentError("precision must be 'f32' or 'f64', got '" + precision + "'");
}

int cmd_eval(const std::string& dataset, const std::string& checkpoint, const std::string& scenario,
             const std::string& report_path) {
    if (scenario != "tts" && scenario != "ttd")
        throw ArgumentError("scenario must be 'tts' or 'ttd', got '" + scenario + "'");
    const LoadedDataset ld = load_for_run(dataset);

    const ModelGraph graph = graph_from_json(jsonutil::load_json_file(checkpoint + "/graph.json"),
                                             checkpoint + "/graph.json");
    Model<float> model(graph);
    model.load_params(checkpoint + "/mbed.params");
    model.load_params(checkpoint + "/atn.params");

    const std::vector<std::size_t>& idxs = scenario == "tts" ? ld.split.test : ld.ttd;
    if (idxs.empty()) throw ArgumentError("no examples for scenario '" + scenario + "' in this dataset");

    std::vector<int> preds(idxs.size()), labels(idxs.size());
    parallel_for(idxs.size(), worker_count(), [&](std::size_t k, std::size_t) {
        const Tensor<float> x = model.input_from(ld.ds.examples[idxs[k]].x);
        const std::vector<float> probs = model.forward_probs(x, RunMode::eval);
        int best = 0;
        for (std::size_t c = 1; c < probs.size(); ++c)
            if (probs[c] > probs[best]) best = static_cast<int>(c);
        preds[k] = best;
        labels[k] = ld.labels[idxs[k]];
    });
    const ConfusionMatrix cm = confusion(preds, labels, static_cast<std::size_t>(ld.num_classes));
    const double tpr_v = tpr(cm), fpr_v = fpr(cm), top1_v = top1(cm);

    json confusion_rows = json::array();
    for (std::size_t t = 0; t < cm.num_classes; ++t) {
        json row = json::array();
        for (std::size_t p = 0; p < cm.num_classes; ++p) row.push_back(cm.at(t, p));
        confusion_rows.push_back(row);
    }
    json rep{{"scenario", scenario},
             {"model", "mbed-atn"},
             {"m", ld.ds.config.m},
             {"mode", ld.ds.config.mode == DecimMode::anti_aliased ? "aa" : "plain"},
             {"examples", idxs.size()},
             {"tpr", tpr_v},
             {"fpr", fpr_v},
             {"top1", top1_v},
             {"kpi_line", format_kpi_line(tpr_v, fpr_v, top1_v)},
             {"confusion", confusion_rows}};
    jsonutil::save_json_file(report_path, rep);
    const std::string cm_path = report_path + ".confusion.csv";
    write_confusion_csv(cm_path, cm);
    std::cout << scenario << " tpr/fpr/top1: " << format_kpi_line(tpr_v, fpr_v, top1_v) << " (" << idxs.size()
              << " examples)\n";
    return 0;
}

int cmd_complexity(const std::string& model, std::size_t m, double scale, std::uint64_t batch, int classes,
                   const std::string& format, int gru_chunk, const std::string& json_out) {
    if (model != "mbed-atn") throw ArgumentError("unknown model '" + model + "' (expected 'mbed-atn')");
    const int in_ch = parse_format(format) == FeatureFormat::mag_phase_psd ? 3 : 2;
    const ModelGraph g = build_mbed_atn(m, scale, classes, in_ch, gru_chunk);
    const ComplexityReport rep = complexity_report(g, batch);
    std::cout << render_complexity_table("Mbed-ATN", rep, m);

    if (!json_out.empty()) {
        json rows = json::array();
        for (const auto& r : rep.rows) rows.push_back(json{{"name", r.name}, {"params", r.params}, {"flops", r.flops}});
        json j{{"model", "mbed-atn"},
               {"m", m},
               {"scale", scale},
               {"batch", batch},
               {"params", rep.params},
               {"flops", rep.flops},
               {"activation_elems", rep.activation_elems},
               {"memory_stage_bytes", rep.memory_stage_bytes},
               {"breakdown", rows}};
        jsonutil::save_json_file(json_out, j);
    }
    return 0;
}

int cmd_export_features(const std::string& dataset, const std::string& checkpoint, const std::string& out) {
    const LoadedDataset ld = load_for_run(dataset);
    const ModelGraph graph = graph_from_json(jsonutil::load_json_file(checkpoint + "/graph.json"),
                                             checkpoint + "/graph.json");
    Model<float> model(graph);
    model.load_params(checkpoint + "/mbed.params");

    std::ofstream os(out);
    if (!os) throw IoError("cannot create csv: " + out);
    const std::size_t width = model.shapes().feature_width;
    for (std::size_t c = 0; c < width; ++c) os << "f" << c << ",";
    os << "label\n";

    std::vector<std::string> lines(ld.ds.examples.size());
    parallel_for(ld.ds.examples.size(), worker_count(), [&](std::size_t i, std::size_t) {
        const Tensor<float> x = model.input_from(ld.ds.examples[i].x);
        const Tensor<float> f = model.forward_mbed(x, RunMode::eval, nullptr);
        std::string line;
        char buf[32];
        for (float v : f.data) {
            std::snprintf(buf, sizeof buf, "%.8g,", static_cast<double>(v));
            line += buf;
        }
        line += std::to_string(ld.labels[i]);
        lines[i] = std::move(line);
    });
    for (const auto& l : lines) os << l << "\n";
    std::cout << "wrote " << lines.size() << " feature rows (width " << width << ") to " << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bluetooth RF-fingerprinting lab: simulate, extract features, train Mbed-ATN, evaluate, profile"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate a labeled synthetic hop dataset");
    std::string sim_profiles, sim_hops, sim_channels, sim_mode = "aa", sim_format = "eq2", sim_out;
    std::size_t sim_n = 0, sim_n_ttd = 0, sim_m = 0, sim_factor = 10;
    double sim_fs = 2e6;
    std::uint64_t sim_seed = 1;
    sim->add_option("--profiles", sim_profiles, "emitter profiles json")->required();
    sim->add_option("--hops", sim_hops, "hop config json")->required();
    sim->add_option("--channels", sim_channels, "channel models json {train, test}")->required();
    sim->add_option("--n", sim_n, "examples per class (TTS pool)")->required();
    sim->add_option("--n-ttd", sim_n_ttd, "TTD examples per class (default n/5)");
    sim->add_option("--m", sim_m, "feature tensor length M")->required();
    sim->add_option("--factor", sim_factor, "decimation factor (raw len = m*factor)");
    sim->add_option("--fs", sim_fs, "simulation sample rate Hz");
    sim->add_option("--mode", sim_mode, "plain|aa");
    sim->add_option("--format", sim_format, "eq2|raw-iq");
    sim->add_option("--seed", sim_seed, "master seed");
    sim->add_option("--out", sim_out, "output directory")->required();

    // features
    auto* feat = app.add_subcommand("features", "Feature tensor from a raw IQ capture");
    std::string f_capture, f_descriptor, f_mode = "aa", f_format = "eq2", f_out;
    std::size_t f_m = 0;
    feat->add_option("--capture", f_capture, "capture file")->required();
    feat->add_option("--descriptor", f_descriptor, "format descriptor json")->required();
    feat->add_option("--m", f_m, "feature tensor length M")->required();
    feat->add_option("--mode", f_mode, "plain|aa");
    feat->add_option("--format", f_format, "eq2|raw-iq");
    feat->add_option("--out", f_out, "output tensor file")->required();

    // train
    auto* tr = app.add_subcommand("train", "Two-stage Mbed-ATN training");
    std::string t_dataset, t_model = "mbed-atn", t_stage = "both", t_config, t_precision = "f32", t_out;
    double t_scale = 1.0;
    int t_chunk = 1;
    tr->add_option("--dataset", t_dataset, "dataset manifest json")->required();
    tr->add_option("--model", t_model, "model name");
    tr->add_option("--scale", t_scale, "width scale in (0,1]");
    tr->add_option("--stage", t_stage, "one|two|both");
    tr->add_option("--config", t_config, "train config json");
    tr->add_option("--precision", t_precision, "f32|f64");
    tr->add_option("--gru-chunk", t_chunk, "GRU input chunk width");
    tr->add_option("--out", t_out, "checkpoint directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "KPI report for a trained checkpoint");
    std::string e_dataset, e_checkpoint, e_scenario = "tts", e_report;
    ev->add_option("--dataset", e_dataset, "dataset manifest json")->required();
    ev->add_option("--checkpoint", e_checkpoint, "checkpoint directory")->required();
    ev->add_option("--scenario", e_scenario, "tts|ttd");
    ev->add_option("--report", e_report, "output report json")->required();

    // complexity
    auto* cx = app.add_subcommand("complexity", "Analytic parameters/FLOPs/memory profile");
    std::string c_model = "mbed-atn", c_format = "eq2", c_json;
    std::size_t c_m = 10000;
    double c_scale = 1.0;
    std::uint64_t c_batch = 1;
    int c_classes = 10, c_chunk = 1;
    cx->add_option("--model", c_model, "model name");
    cx->add_option("--m", c_m, "input tensor length M");
    cx->add_option("--scale", c_scale, "width scale in (0,1]");
    cx->add_option("--batch", c_batch, "batch size for memory stages");
    cx->add_option("--classes", c_classes, "output classes");
    cx->add_option("--format", c_format, "eq2|raw-iq");
    cx->add_option("--gru-chunk", c_chunk, "GRU input chunk width");
    cx->add_option("--json", c_json, "also write report json here");

    // export-features
    auto* ex = app.add_subcommand("export-features", "Dump Mbed embedding vectors to CSV");
    std::string x_dataset, x_checkpoint, x_out;
    ex->add_option("--dataset", x_dataset, "dataset manifest json")->required();
    ex->add_option("--checkpoint", x_checkpoint, "checkpoint directory")->required();
    ex->add_option("--out", x_out, "output csv")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            if (sim_n_ttd == 0) sim_n_ttd = std::max<std::size_t>(1, sim_n / 5);
            return cmd_simulate(sim_profiles, sim_hops, sim_channels, sim_n, sim_n_ttd, sim_m, sim_factor, sim_fs,
                                sim_mode, sim_format, sim_seed, sim_out);
        }
        if (feat->parsed()) return cmd_features(f_capture, f_descriptor, f_m, f_mode, f_format, f_out);
        if (tr->parsed())
            return cmd_train(t_dataset, t_model, t_scale, t_stage, t_config, t_precision, t_chunk, t_out);
        if (ev->parsed()) return cmd_eval(e_dataset, e_checkpoint, e_scenario, e_report);
        if (cx->parsed())
            return cmd_complexity(c_model, c_m, c_scale, c_batch, c_classes, c_format, c_chunk, c_json);
        if (ex->parsed()) return cmd_export_features(x_dataset, x_checkpoint, x_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

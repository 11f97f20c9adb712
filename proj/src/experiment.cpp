// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/experiment.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <json.hpp>
#include <sstream>

#include "lth/autograd.hpp"
#include "lth/checkpoint.hpp"
#include "lth/error.hpp"
#include "lth/optimizer.hpp"
#include "lth/pruning.hpp"

namespace fs = std::filesystem;

namespace lth {

namespace {

constexpr std::size_t kEvalBatch = 256;

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string level_file(std::string_view stem, std::size_t level, std::string_view ext) {
    return std::string(stem) + std::to_string(level) + std::string(ext);
}

class DirLock {
public:
    explicit DirLock(const fs::path& dir) {
        const auto path = dir / ".lock";
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
        if (fd_ < 0) throw IoError("cannot open lockfile " + path.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw IoError("run directory " + dir.string() + " is locked by another process");
        }
    }
    ~DirLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    int fd_ = -1;
};

class Runner {
public:
    Runner(const ExperimentConfig& config, const RunHooks& hooks, const RunControl& control)
        : cfg_(config), hooks_(hooks), control_(control), dir_(config.output_dir), streams_(config.seed),
          adam_(config.adam) {}

    RunLedger start() {
        fs::create_directories(dir_);
        DirLock lock(dir_);
        if (fs::exists(dir_ / "ledger.json")) {
            throw ConfigError("output_dir " + dir_.string() + " already holds a run; use resume");
        }
        write_text(dir_ / "config.txt", serialize_config(cfg_));
        prepare();
        ledger_.config_hash = config_hash(cfg_);
        flush();
        return run_from(0, 0, true, {});
    }

    RunLedger resume() {
        if (!fs::exists(dir_ / "config.txt")) throw LoadError("no run recorded in " + dir_.string());
        DirLock lock(dir_);
        const auto recorded = load_config(dir_ / "config.txt");
        if (auto diff = config_diff(recorded, cfg_); !diff.empty()) {
            std::string keys;
            for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
            throw ConfigError("config differs from the recorded run: " + keys);
        }
        ledger_ = read_ledger(dir_);
        if (ledger_.config_hash != config_hash(cfg_)) throw ConfigError("recorded config hash does not match");
        if (ledger_.status == "completed") return ledger_;
        ledger_.status = "running";
        ledger_.failed_level.reset();
        ledger_.error.clear();
        if (fs::exists(dir_ / "timings.json")) {
            for (const auto& t : nlohmann::json::parse(read_text(dir_ / "timings.json"))) {
                timings_.push_back(t.get<double>());
            }
        }
        timings_.resize(ledger_.levels.size(), 0.0);

        prepare();
        const std::size_t done = ledger_.levels.size();
        const auto progress = dir_ / "progress.tfck";
        if (fs::exists(progress)) {
            const auto table = read_checkpoint(progress);
            if (static_cast<std::size_t>(table.i64("meta.level")) == done) {
                import_parameters(net_, table);
                adam_.import_state(table);
                return run_from(done, static_cast<std::size_t>(table.i64("meta.epoch")), false,
                                table.f64("meta.train_loss"));
            }
        }
        if (done > 0) {
            const auto table = read_checkpoint(dir_ / ledger_.levels.back().checkpoint);
            import_parameters(net_, table);
            adam_.import_state(table);
        }
        return run_from(done, 0, true, {});
    }

private:
    void prepare() {
        data_ = load_dataset(cfg_);
        if (data_.class_count != cfg_.arch.classes) {
            throw ConfigError("model.classes does not match the dataset class count");
        }
        meta_ = sample_metadata(data_);
        sampler_ = std::make_unique<BalancedSampler>(data_, Split::Train, cfg_.sampler);
        Rng init = streams_.rng(Stream::Init);
        net_ = build_network(cfg_.arch, init);
        if (!cfg_.backbone_weights.empty()) import_backbone(net_, read_checkpoint(cfg_.backbone_weights));
        snapshot_init(net_);
    }

    void begin_level(std::size_t k) {
        auto& params = net_.parameters();
        if (k == 0) {
            set_freeze_policy(net_, FreezePolicy::L0);
            return;
        }
        set_freeze_policy(net_, FreezePolicy::Full);
        const double target = cfg_.schedule.target(k);
        const double threshold = global_threshold(params, target);
        apply_prune(params, threshold, target, k);
        rewind(net_, adam_);
    }

    double train_step(std::size_t level, std::size_t epoch, std::size_t step, Rng& sampler_rng, Rng& aug_rng,
                      Rng& drop_rng) {
        auto& params = net_.parameters();
        const auto indices = sampler_->next_batch(cfg_.batch_size, sampler_rng);
        const Batch batch = make_batch(data_, indices, cfg_.arch.input_size, &aug_rng, cfg_.hflip);
        Tape tape;
        Var x = tape.constant(batch.images);
        Var logits = net_.forward(tape, x, Mode::Train, drop_rng);
        Var loss = softmax_cross_entropy(logits, batch.labels);
        const double value = loss.value()[0];
        if (!std::isfinite(value)) {
            throw InvariantError("non-finite loss at level " + std::to_string(level) + ", epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(step));
        }
        zero_grads(params);
        tape.backward(loss);
        adam_.step(params);
        return value;
    }

    void save_progress(std::size_t level, std::size_t next_epoch, const std::vector<double>& losses) {
        TensorTable table;
        export_parameters(net_, table);
        adam_.export_state(table);
        table.add_i64("meta.level", static_cast<std::int64_t>(level));
        table.add_i64("meta.epoch", static_cast<std::int64_t>(next_epoch));
        table.add_f64("meta.train_loss", losses);
        table.add_string("meta.config_hash", ledger_.config_hash);
        write_checkpoint(dir_ / "progress.tfck", table);
    }

    RunLedger run_from(std::size_t first_level, std::size_t first_epoch, bool fresh_level,
                       std::vector<double> losses) {
        std::size_t level = first_level;
        try {
            const std::size_t epochs = cfg_.schedule.epochs_per_round;
            const std::size_t train_count = data_.indices(Split::Train).size();
            const std::size_t steps_per_epoch = (train_count + cfg_.batch_size - 1) / cfg_.batch_size;
            for (; level < cfg_.schedule.rounds; ++level) {
                const auto t0 = std::chrono::steady_clock::now();
                std::size_t epoch = 0;
                if (level == first_level && !fresh_level) {
                    epoch = first_epoch;
                } else {
                    begin_level(level);
                    losses.clear();
                    if (hooks_.on_level_start) hooks_.on_level_start(level, net_);
                }
                for (; epoch < epochs; ++epoch) {
                    Rng sampler_rng = streams_.rng(Stream::Sampler, level, epoch);
                    Rng aug_rng = streams_.rng(Stream::Augmentation, level, epoch);
                    Rng drop_rng = streams_.rng(Stream::Dropout, level, epoch);
                    double total = 0.0;
                    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
                        const std::size_t step = epoch * steps_per_epoch + s + 1;
                        const double loss = train_step(level, epoch, step, sampler_rng, aug_rng, drop_rng);
                        total += loss;
                        if (hooks_.on_step) hooks_.on_step(StepEvent{level, epoch, step, loss, net_});
                    }
                    losses.push_back(total / static_cast<double>(steps_per_epoch));
                    save_progress(level, epoch + 1, losses);
                    if (control_.stop_after_epoch && control_.stop_after_epoch->first == level &&
                        control_.stop_after_epoch->second == epoch && epoch + 1 < epochs) {
                        ledger_.status = "interrupted";
                        flush();
                        return ledger_;
                    }
                }
                const double seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                finish_level(level, losses, seconds);
                if (control_.stop_after_level && *control_.stop_after_level == level &&
                    level + 1 < cfg_.schedule.rounds) {
                    ledger_.status = "interrupted";
                    flush();
                    return ledger_;
                }
            }
            ledger_.status = "completed";
            flush();
            return ledger_;
        } catch (const Error& e) {
            ledger_.status = "failed";
            ledger_.failed_level = level;
            ledger_.error = e.what();
            try {
                flush();
            } catch (const Error&) {
            }
            throw;
        }
    }

    void finish_level(std::size_t level, const std::vector<double>& losses, double seconds) {
        LevelRecord rec;
        rec.level = level;
        rec.target = cfg_.schedule.target(level);
        const auto state = ticket_state(net_.parameters(), level);
        rec.sparsity = sparsity(state);
        rec.masked = state.masked;
        rec.prunable = state.total;
        rec.train_loss = losses;
        rec.train_accuracy = accuracy(evaluate_split(net_, data_, Split::Train, level).confusion);
        const auto test = evaluate_split(net_, data_, Split::Test, level);
        rec.test_accuracy = accuracy(test.confusion);
        PredictionLog single = test.predictions;
        for (auto& p : single) p.level = 0;
        const auto groups = subgroup_accuracy(single, meta_, 1);
        for (std::size_t g = 0; g < kSubgroups.size(); ++g) rec.subgroups[g] = groups.cells[g][0];

        write_text(dir_ / level_file("predictions_L", level, ".csv"), predictions_csv(test.predictions, meta_));

        TensorTable table;
        export_parameters(net_, table);
        adam_.export_state(table);
        table.add_i64("meta.level", static_cast<std::int64_t>(level));
        table.add_string("meta.config_hash", ledger_.config_hash);
        rec.checkpoint = level_file("level_", level, ".tfck");
        write_checkpoint(dir_ / rec.checkpoint, table);

        rec.wall_seconds = seconds;
        ledger_.levels.push_back(rec);
        timings_.push_back(seconds);
        write_reports(dir_, level + 1, cfg_.arch.classes);
        flush();
        fs::remove(dir_ / "progress.tfck");
        if (hooks_.on_level_end) hooks_.on_level_end(level, net_);
    }

    void flush() {
        write_text(dir_ / "ledger.json", ledger_json(ledger_));
        write_text(dir_ / "timings.json", nlohmann::json(timings_).dump(2) + "\n");
    }

    ExperimentConfig cfg_;
    const RunHooks& hooks_;
    const RunControl& control_;
    fs::path dir_;
    SeedStreams streams_;
    DatasetManifest data_;
    std::vector<SampleMeta> meta_;
    std::unique_ptr<BalancedSampler> sampler_;
    Network net_;
    Adam adam_;
    RunLedger ledger_;
    std::vector<double> timings_;
};

}  // namespace

std::string ledger_json(const RunLedger& ledger) {
    using nlohmann::ordered_json;
    ordered_json doc;
    doc["status"] = ledger.status;
    doc["config_hash"] = ledger.config_hash;
    doc["failed_level"] = ledger.failed_level ? ordered_json(*ledger.failed_level) : ordered_json(nullptr);
    doc["error"] = ledger.error;
    ordered_json levels = ordered_json::array();
    for (const auto& r : ledger.levels) {
        ordered_json l;
        l["level"] = r.level;
        l["target"] = r.target;
        l["sparsity"] = r.sparsity;
        l["masked"] = r.masked;
        l["prunable"] = r.prunable;
        l["train_loss"] = r.train_loss;
        l["train_accuracy"] = r.train_accuracy;
        l["test_accuracy"] = r.test_accuracy;
        ordered_json groups;
        for (std::size_t g = 0; g < kSubgroups.size(); ++g) {
            const auto name = std::string(subgroup_name(kSubgroups[g]));
            groups[name] = r.subgroups[g] ? ordered_json(*r.subgroups[g]) : ordered_json(nullptr);
        }
        l["subgroups"] = groups;
        l["checkpoint"] = r.checkpoint;
        levels.push_back(l);
    }
    doc["levels"] = levels;
    return doc.dump(2) + "\n";
}

RunLedger parse_ledger_json(std::string_view text) {
    RunLedger ledger;
    try {
        const auto doc = nlohmann::json::parse(text);
        ledger.status = doc.at("status").get<std::string>();
        ledger.config_hash = doc.at("config_hash").get<std::string>();
        if (!doc.at("failed_level").is_null()) ledger.failed_level = doc.at("failed_level").get<std::size_t>();
        ledger.error = doc.at("error").get<std::string>();
        for (const auto& l : doc.at("levels")) {
            LevelRecord r;
            r.level = l.at("level").get<std::size_t>();
            r.target = l.at("target").get<double>();
            r.sparsity = l.at("sparsity").get<double>();
            r.masked = l.at("masked").get<std::size_t>();
            r.prunable = l.at("prunable").get<std::size_t>();
            r.train_loss = l.at("train_loss").get<std::vector<double>>();
            r.train_accuracy = l.at("train_accuracy").get<double>();
            r.test_accuracy = l.at("test_accuracy").get<double>();
            const auto& groups = l.at("subgroups");
            for (std::size_t g = 0; g < kSubgroups.size(); ++g) {
                const auto& v = groups.at(std::string(subgroup_name(kSubgroups[g])));
                if (!v.is_null()) r.subgroups[g] = v.get<double>();
            }
            r.checkpoint = l.at("checkpoint").get<std::string>();
            if (r.level != ledger.levels.size()) throw FormatError("ledger levels are not contiguous from 0");
            ledger.levels.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed ledger: ") + e.what());
    }
    return ledger;
}

RunLedger read_ledger(const fs::path& run_dir) { return parse_ledger_json(read_text(run_dir / "ledger.json")); }

DatasetManifest load_dataset(const ExperimentConfig& config) {
    DatasetManifest manifest;
    if (config.manifest.empty()) {
        const fs::path dir = fs::path(config.output_dir) / "data";
        if (!fs::exists(dir / "manifest.csv")) {
            SynthConfig synth = config.synth;
            synth.seed = config.seed;
            synth.class_count = config.arch.classes;
            synth_generate(synth, dir);
        }
        manifest = load_manifest(dir / "manifest.csv", dir, config.arch.classes);
    } else {
        const fs::path csv = config.manifest;
        const fs::path images = config.image_dir.empty() ? csv.parent_path() : fs::path(config.image_dir);
        manifest = load_manifest(csv, images, config.arch.classes);
    }
    manifest.normalization = compute_normalization(manifest, config.arch.input_size);
    return manifest;
}

EvalResult evaluate_split(Network& net, const DatasetManifest& manifest, Split split, std::size_t level) {
    const auto indices = manifest.indices(split);
    if (indices.empty()) throw MetricError(std::string("no records in the ") + std::string(to_string(split)) + " split");
    const std::size_t size = net.input_shape().at(1);
    EvalResult result;
    std::vector<std::int32_t> preds, labels;
    for (std::size_t begin = 0; begin < indices.size(); begin += kEvalBatch) {
        const std::size_t end = std::min(indices.size(), begin + kEvalBatch);
        const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                             indices.begin() + static_cast<std::ptrdiff_t>(end));
        const Batch batch = make_batch(manifest, chunk, size);
        const auto p = argmax_rows(net.logits(batch.images));
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            preds.push_back(p[i]);
            labels.push_back(batch.labels[i]);
            result.predictions.push_back(Prediction{chunk[i], level, batch.labels[i], p[i]});
        }
    }
    result.confusion = confusion(preds, labels, net.class_count());
    return result;
}

std::string predictions_csv(const PredictionLog& log, std::span<const SampleMeta> metadata) {
    std::string out = "sample,label,pred,age,sex\n";
    for (const auto& p : log) {
        const auto& m = metadata[p.sample];
        out += std::to_string(p.sample) + "," + std::to_string(p.label) + "," + std::to_string(p.pred) + ",";
        if (m.age) out += std::to_string(*m.age);
        out += ",";
        if (m.sex) out += std::string(to_string(*m.sex));
        out += "\n";
    }
    return out;
}

PredictionFile parse_predictions_csv(std::string_view text, std::size_t level) {
    PredictionFile file;
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != "sample,label,pred,age,sex") {
        throw FormatError("predictions file must start with 'sample,label,pred,age,sex'");
    }
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 5) throw FormatError("predictions row " + std::to_string(row) + ": expected 5 cells");
        try {
            Prediction p;
            p.sample = std::stoul(cells[0]);
            p.level = level;
            p.label = static_cast<std::int32_t>(std::stol(cells[1]));
            p.pred = static_cast<std::int32_t>(std::stol(cells[2]));
            SampleMeta m;
            if (!cells[3].empty()) m.age = std::stoi(cells[3]);
            if (cells[4] == to_string(Sex::Male)) {
                m.sex = Sex::Male;
            } else if (cells[4] == to_string(Sex::Female)) {
                m.sex = Sex::Female;
            } else if (!cells[4].empty()) {
                throw FormatError("predictions row " + std::to_string(row) + ": unknown sex '" + cells[4] + "'");
            }
            if (file.metadata.size() <= p.sample) file.metadata.resize(p.sample + 1);
            file.metadata[p.sample] = m;
            file.log.push_back(p);
        } catch (const std::logic_error&) {
            throw FormatError("predictions row " + std::to_string(row) + ": malformed number");
        }
    }
    return file;
}

void write_reports(const fs::path& run_dir, std::size_t levels, std::size_t classes) {
    PredictionLog log;
    std::vector<SampleMeta> metadata;
    std::vector<LevelMetrics> metrics;
    for (std::size_t k = 0; k < levels; ++k) {
        auto file = parse_predictions_csv(read_text(run_dir / level_file("predictions_L", k, ".csv")), k);
        std::vector<std::int32_t> preds, labels;
        for (const auto& p : file.log) {
            preds.push_back(p.pred);
            labels.push_back(p.label);
        }
        const auto cm = confusion(preds, labels, classes);
        write_text(run_dir / level_file("confusion_L", k, ".csv"), confusion_csv(cm));
        metrics.push_back(LevelMetrics{k, cm});
        if (metadata.size() < file.metadata.size()) metadata.resize(file.metadata.size());
        for (const auto& p : file.log) metadata[p.sample] = file.metadata[p.sample];
        log.insert(log.end(), file.log.begin(), file.log.end());
    }
    const auto groups = subgroup_accuracy(log, metadata, levels);
    std::vector<std::optional<ConfusionMatrix>> cms;
    for (const auto& m : metrics) cms.emplace_back(m.confusion);
    write_text(run_dir / "subgroups.csv", subgroup_csv(groups));
    write_text(run_dir / "tp_table.csv", tp_table_csv(tp_evolution(cms)));
    write_text(run_dir / "gaps.csv", gap_table_csv(gap_analysis(groups)));
    write_text(run_dir / "report.json", report_json(metrics, groups));
}

RunLedger run_lth(const ExperimentConfig& config, const RunHooks& hooks, const RunControl& control) {
    validate(config);
    return Runner(config, hooks, control).start();
}

RunLedger resume(const ExperimentConfig& config, const RunHooks& hooks, const RunControl& control) {
    validate(config);
    return Runner(config, hooks, control).resume();
}

}  // namespace lth

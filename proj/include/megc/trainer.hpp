#pragma once

// End-to-end MEGC training: balanced batch streaming, supervision bundle
// resolution, the masked multi-cue objective, Adam updates, per-epoch
// checkpoints and a line-delimited training log. Runs are fully
// determined by (corpus, config, seed).

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "megc/checkpoint.hpp"
#include "megc/corpus.hpp"
#include "megc/cue_synthesis.hpp"
#include "megc/megc_net.hpp"
#include "megc/moire_estimator.hpp"
#include "megc/objectives.hpp"

namespace megc {

struct TrainConfig {
    long steps = 300;            // total optimizer steps (resume continues to this)
    int batch_size = 4;
    double lr = 1e-4;
    nn::LrSchedule schedule = nn::LrSchedule::cosine;
    std::uint64_t seed = 1;
    LossWeights weights;
    LossOptions loss_options;
    BackboneConfig backbone;
    std::set<Cue> disabled_cues;
    double composite_fraction = 0.25;
    // Boundary composites built in memory at run start instead of being
    // read from an offline-synthesized manifest. Regenerated per run from
    // the seed, so determinism is unaffected.
    int online_composites = 0;
    int checkpoint_every_epochs = 1;

    void validate() const {
        require(steps > 0, ErrorCategory::config, "steps must be positive");
        require(batch_size >= 2 && batch_size % 2 == 0, ErrorCategory::config,
                "batch_size must be a positive even integer");
        require(composite_fraction >= 0.0 && composite_fraction <= 1.0, ErrorCategory::config,
                "composite_fraction must lie in [0,1]");
        require(online_composites >= 0, ErrorCategory::config,
                "online_composites must be non-negative");
        weights.validate();
    }
};

// Resolves supervision bundles for prepared samples.
template <typename T = float>
class SupervisionSource {
public:
    virtual ~SupervisionSource() = default;
    virtual SupervisionBundle<T> bundle(const FaceSample<T>& sample) = 0;
};

// Computes bundles on the fly from cue providers (raised-cosine depth,
// zero reflection, optional moire extractor).
template <typename T = float>
class ProviderSupervision final : public SupervisionSource<T> {
public:
    explicit ProviderSupervision(CueProviders<T> providers = default_providers<T>())
        : providers_(std::move(providers)) {}

    // Wires a trained moire net in as the moire provider.
    ProviderSupervision(CueProviders<T> providers, std::shared_ptr<MoireNet<T>> moire_net)
        : providers_(std::move(providers)), moire_net_(std::move(moire_net)) {
        providers_.moire = [net = moire_net_](const FaceSample<T>& s) {
            return extract_moire_map(*net, s.image);
        };
    }

    SupervisionBundle<T> bundle(const FaceSample<T>& sample) override {
        return supervision_for_sample(sample, providers_);
    }

private:
    CueProviders<T> providers_;
    std::shared_ptr<MoireNet<T>> moire_net_;
};

// Reads persisted cue maps (<sample_id>.<cue>.png) from a directory.
// Missing reflection maps fall back to zeros; depth, moire and boundary
// maps are required wherever their cue is active.
template <typename T = float>
class FileSupervision final : public SupervisionSource<T> {
public:
    explicit FileSupervision(std::string cue_dir) : dir_(std::move(cue_dir)) {
        require(std::filesystem::is_directory(dir_), ErrorCategory::io,
                "cue directory not found: " + dir_);
    }

    SupervisionBundle<T> bundle(const FaceSample<T>& sample) override {
        SupervisionBundle<T> b;
        b.depth_gt = Tensor<T>(1, 1, kMapSize, kMapSize);
        b.reflection_gt = Tensor<T>(1, 1, kMapSize, kMapSize);
        b.moire_gt = Tensor<T>(1, 1, kMapSize, kMapSize);
        b.boundary_gt = Tensor<T>(1, 1, kMapSize, kMapSize);
        const CueValidity v = validity_for(sample.label, sample.spoof_type, sample.composite_source);
        b.depth_valid = v.depth;
        b.reflection_valid = v.reflection;
        b.moire_valid = v.moire;
        b.boundary_valid = v.boundary;

        if (sample.label == Label::live) {
            b.depth_gt = require_map(sample, "depth");
            return b;
        }
        if (auto m = optional_map(sample, "reflection")) b.reflection_gt = *m;
        if (v.moire) b.moire_gt = require_map(sample, "moire");
        if (sample.spoof_type == SpoofType::composite) {
            if (sample.boundary_gt.has_value())
                b.boundary_gt = *sample.boundary_gt;
            else
                b.boundary_gt = require_map(sample, "boundary");
        }
        return b;
    }

private:
    Tensor<T> require_map(const FaceSample<T>& s, const std::string& cue) {
        const std::string path = cue_file(dir_, s.source_id, cue);
        require(std::filesystem::exists(path), ErrorCategory::state,
                concat("missing ", cue, " map for sample ", s.source_id, " (", path, ")"));
        return load_resized(path);
    }

    std::optional<Tensor<T>> optional_map(const FaceSample<T>& s, const std::string& cue) {
        const std::string path = cue_file(dir_, s.source_id, cue);
        if (!std::filesystem::exists(path)) return std::nullopt;
        return load_resized(path);
    }

    Tensor<T> load_resized(const std::string& path) {
        Tensor<T> m = io::read_map_png<T>(path);
        if (m.h() != kMapSize || m.w() != kMapSize) m = area_downsample(m, kMapSize, kMapSize);
        return m;
    }

    std::string dir_;
};

struct StepRecord {
    long step = 0;
    long epoch = 0;
    double lr = 0.0;
    LossBreakdown loss;
};

template <typename T = float>
struct TrainResult {
    std::vector<StepRecord> history;
    double train_accuracy = 0.0;
    std::string final_checkpoint;
};

namespace detail {

template <typename T>
void assert_sample_rules(const FaceSample<T>& s, const SupervisionBundle<T>& b) {
    if (s.label == Label::live) {
        require(b.moire_gt.max() == T(0) && b.boundary_gt.max() == T(0) &&
                    b.reflection_gt.max() == T(0),
                ErrorCategory::data,
                "live sample " + s.source_id + " has nonzero moire/boundary/reflection supervision");
    }
    if (s.label == Label::spoof && s.spoof_type != SpoofType::replay) {
        const bool replay_composite = s.spoof_type == SpoofType::composite &&
                                      s.composite_source == SpoofType::replay;
        require(replay_composite || !b.moire_valid, ErrorCategory::data,
                "non-replay spoof " + s.source_id + " participates in the moire loss");
    }
}

}  // namespace detail

template <typename T = float>
class Trainer {
public:
    Trainer(const CorpusIndex& index, SupervisionSource<T>& source, TrainConfig config,
            std::string run_dir)
        : index_(index),
          source_(&source),
          config_(std::move(config)),
          run_dir_(std::move(run_dir)) {
        config_.validate();
        loader_ = std::make_unique<SampleLoader<T>>(index_);
        if (config_.online_composites > 0) build_online_composites();
        plan_ = std::make_unique<BatchPlan>(
            index_, BatchPlanOptions{config_.batch_size, config_.seed, config_.composite_fraction});
        net_ = std::make_unique<MegcNet<T>>(config_.backbone, config_.seed, config_.disabled_cues);
        std::filesystem::create_directories(run_dir_);
        // Resolve supervision for every record up front: unresolved cues
        // must fail before step 1.
        for (int i = 0; i < static_cast<int>(index_.samples.size()); ++i) cached_bundle(i);
    }

    MegcNet<T>& net() { return *net_; }
    const BatchPlan& plan() const { return *plan_; }
    const CorpusIndex& corpus() const { return index_; }

    TrainResult<T> train() { return run(0, nullptr); }

    TrainResult<T> resume(const std::string& checkpoint_path) {
        require(std::filesystem::exists(checkpoint_path), ErrorCategory::io,
                "checkpoint not found: " + checkpoint_path);
        Checkpoint ck = Checkpoint::load(checkpoint_path);
        restore_parameters(ck, net_->params());
        return run(ck.meta.value("train_step", 0L), &ck);
    }

private:
    TrainResult<T> run(long start_step, const Checkpoint* resume_ck) {
        nn::Adam<T> adam(net_->params(),
                         {config_.lr, 0.9, 0.999, 1e-8, config_.schedule, config_.steps});
        if (resume_ck) restore_optimizer(*resume_ck, adam, net_->params());

        std::ofstream log(log_path(), resume_ck ? std::ios::app : std::ios::trunc);
        require(log.good(), ErrorCategory::io, "cannot write training log: " + log_path());

        TrainResult<T> result;
        const int bpe = plan_->batches_per_epoch();
        for (long step = start_step; step < config_.steps; ++step) {
            const long epoch = step / bpe;
            const int k = static_cast<int>(step % bpe);
            std::vector<int> ids = plan_->batch(static_cast<std::uint64_t>(epoch), k);

            Batch batch = assemble(ids);
            int n_live = 0;
            for (Label l : batch.labels) n_live += l == Label::live ? 1 : 0;
            require(2 * n_live == config_.batch_size, ErrorCategory::data,
                    "batch lost its class balance");

            ad::Graph<T> g;
            BatchValidity<T> validity{batch.depth_valid, batch.reflection_valid, batch.moire_valid,
                                      batch.boundary_valid};
            MegcOutput<T> out = net_->forward(g, batch.images, validity);
            auto [loss, breakdown] = build_loss(g, out, batch);

            if (!std::isfinite(breakdown.l_overall)) {
                std::string ids_str;
                for (const auto& sid : batch.source_ids) ids_str += " " + sid;
                fail(ErrorCategory::numeric,
                     concat("non-finite loss at step ", step, "; offending batch:", ids_str));
            }

            net_->params().zero_grad();
            g.backward(loss);
            adam.step();

            StepRecord rec{step, epoch, adam.lr_at(step), breakdown};
            result.history.push_back(rec);
            log << record_json(rec).dump() << '\n';

            if ((step + 1) % bpe == 0 && config_.checkpoint_every_epochs > 0 &&
                ((epoch + 1) % config_.checkpoint_every_epochs == 0)) {
                save_checkpoint(epoch_ckpt_path(epoch), step + 1, adam);
            }
        }
        result.final_checkpoint = final_ckpt_path();
        save_checkpoint(result.final_checkpoint, config_.steps, adam);
        result.train_accuracy = train_accuracy();
        return result;
    }

    struct Batch {
        Tensor<T> images;
        std::vector<Label> labels;
        std::vector<std::string> source_ids;
        Tensor<T> depth_gt, reflection_gt, moire_gt, boundary_gt;
        std::vector<bool> depth_valid, reflection_valid, moire_valid, boundary_valid;
    };

    // Batch-plan indices resolve against the (possibly extended) corpus:
    // records beyond the on-disk samples are in-memory online composites.
    FaceSample<T> sample(int idx) {
        const int n_disk = static_cast<int>(index_.samples.size()) -
                           static_cast<int>(online_.size());
        if (idx < n_disk) return loader_->load(idx);
        return online_[static_cast<std::size_t>(idx - n_disk)];
    }

    void build_online_composites() {
        std::vector<int> live_ids, donor_ids;
        for (int i = 0; i < static_cast<int>(index_.samples.size()); ++i) {
            const auto& rec = index_.samples[static_cast<std::size_t>(i)];
            if (rec.label == Label::live)
                live_ids.push_back(i);
            else if (rec.spoof_type != SpoofType::composite)
                donor_ids.push_back(i);
        }
        require(!live_ids.empty() && !donor_ids.empty(), ErrorCategory::data,
                "online composites need both live and original spoof samples");
        auto rng = make_rng(config_.seed, 0x6f6e6c696e65);
        std::uniform_int_distribution<std::size_t> pick_live(0, live_ids.size() - 1);
        std::uniform_int_distribution<std::size_t> pick_donor(0, donor_ids.size() - 1);
        for (int k = 0; k < config_.online_composites; ++k) {
            FaceSample<T> live = loader_->load(live_ids[pick_live(rng)]);
            FaceSample<T> donor = loader_->load(donor_ids[pick_donor(rng)]);
            PasteGeometry geom{donor.face_in_crop,
                               mix_seed(config_.seed, 0xA000 + static_cast<std::uint64_t>(k)), true};
            BoundaryComposite<T> comp = composite_boundary(live, donor, geom);
            comp.sample.source_id += concat("_oc", k);
            ManifestRecord rec;
            rec.path = "<online>";
            rec.label = Label::spoof;
            rec.spoof_type = SpoofType::composite;
            rec.composite_source = donor.spoof_type;
            rec.source_id = comp.sample.source_id;
            index_.samples.push_back(std::move(rec));
            online_.push_back(std::move(comp.sample));
        }
    }

    const SupervisionBundle<T>& cached_bundle(int idx) {
        auto it = bundles_.find(idx);
        if (it != bundles_.end()) return it->second;
        FaceSample<T> s = sample(idx);
        SupervisionBundle<T> b = source_->bundle(s);
        detail::assert_sample_rules(s, b);
        return bundles_.emplace(idx, std::move(b)).first->second;
    }

    Batch assemble(const std::vector<int>& ids) {
        const int n = static_cast<int>(ids.size());
        Batch batch;
        batch.images = Tensor<T>(n, 6, kCropSize, kCropSize);
        batch.depth_gt = Tensor<T>(n, 1, kMapSize, kMapSize);
        batch.reflection_gt = Tensor<T>(n, 1, kMapSize, kMapSize);
        batch.moire_gt = Tensor<T>(n, 1, kMapSize, kMapSize);
        batch.boundary_gt = Tensor<T>(n, 1, kMapSize, kMapSize);
        for (int i = 0; i < n; ++i) {
            FaceSample<T> s = sample(ids[static_cast<std::size_t>(i)]);
            const SupervisionBundle<T>& b = cached_bundle(ids[static_cast<std::size_t>(i)]);
            batch.images.set_sample(i, s.image);
            batch.labels.push_back(s.label);
            batch.source_ids.push_back(s.source_id);
            batch.depth_gt.set_sample(i, b.depth_gt);
            batch.reflection_gt.set_sample(i, b.reflection_gt);
            batch.moire_gt.set_sample(i, b.moire_gt);
            batch.boundary_gt.set_sample(i, b.boundary_gt);
            batch.depth_valid.push_back(b.depth_valid);
            batch.reflection_valid.push_back(b.reflection_valid);
            batch.moire_valid.push_back(b.moire_valid);
            batch.boundary_valid.push_back(b.boundary_valid);
        }
        return batch;
    }

    std::pair<ad::Value<T>, LossBreakdown> build_loss(ad::Graph<T>& g, const MegcOutput<T>& out,
                                                      const Batch& batch) {
        using ad::op::masked_map_mse;
        using ad::op::softmax_cross_entropy;
        using ad::op::weighted_sum;

        std::vector<int> label_idx;
        for (Label l : batch.labels) label_idx.push_back(l == Label::live ? 0 : 1);
        ad::Value<T> l_cls = softmax_cross_entropy(g, out.logits, label_idx);

        std::vector<ad::Value<T>> terms{l_cls};
        std::vector<double> coeffs{config_.weights.mu};
        auto add_cue = [&](Cue c, const ad::Value<T>& pred, const Tensor<T>& gt,
                           const std::vector<bool>& valid) -> MapLossResult {
            if (!pred) return {};
            ad::Value<T> l = masked_map_mse(g, pred, gt, valid, config_.loss_options.pixel_mean,
                                            config_.loss_options.divide_by_valid);
            terms.push_back(l);
            coeffs.push_back(config_.weights.lambda);
            MapLossResult r;
            r.value = static_cast<double>(l->val[0]);
            for (bool v : valid) r.valid_count += v ? 1 : 0;
            r.all_masked = r.valid_count == 0;
            return r;
        };

        MapLossResult rd = add_cue(Cue::depth, out.aux.depth_pre, batch.depth_gt, batch.depth_valid);
        MapLossResult rr = add_cue(Cue::reflection, out.aux.reflection_pre, batch.reflection_gt,
                                   batch.reflection_valid);
        MapLossResult rm = add_cue(Cue::moire, out.aux.moire_pre, batch.moire_gt, batch.moire_valid);
        MapLossResult rb = add_cue(Cue::boundary, out.aux.boundary_pre, batch.boundary_gt,
                                   batch.boundary_valid);

        ad::Value<T> total = weighted_sum(g, terms, coeffs);
        // The reported breakdown keeps the exact weighted-sum identity in
        // double; the graph scalar (same value up to T's rounding) drives
        // backprop.
        LossBreakdown breakdown = overall_loss(static_cast<double>(l_cls->val[0]), rd, rr, rm, rb,
                                               config_.weights);
        if (!std::isfinite(static_cast<double>(total->val[0]))) breakdown.l_overall = total->val[0];
        return {total, breakdown};
    }

    nlohmann::json record_json(const StepRecord& rec) const {
        nlohmann::json j{{"step", rec.step}, {"epoch", rec.epoch}, {"lr", rec.lr},
                         {"l_cls", rec.loss.l_cls}, {"l_overall", rec.loss.l_overall}};
        auto put = [&](Cue c, const char* key, double v, int count) {
            if (net_->has_head(c)) {
                j[key] = v;
                j["valid"][to_string(c)] = count;
            }
        };
        put(Cue::depth, "l_d", rec.loss.l_d, rec.loss.n_depth);
        put(Cue::reflection, "l_r", rec.loss.l_r, rec.loss.n_reflection);
        put(Cue::moire, "l_m", rec.loss.l_m, rec.loss.n_moire);
        put(Cue::boundary, "l_b", rec.loss.l_b, rec.loss.n_boundary);
        return j;
    }

    double train_accuracy() {
        const auto& samples = index_.samples;
        int correct = 0;
        for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
            FaceSample<T> s = sample(i);
            const double score = net_->spoof_scores(s.image)[0];
            const Label pred = score >= 0.5 ? Label::spoof : Label::live;
            correct += pred == s.label ? 1 : 0;
        }
        return samples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(samples.size());
    }

    void save_checkpoint(const std::string& path, long completed_steps, nn::Adam<T>& adam) {
        Checkpoint ck;
        ck.meta["train_step"] = completed_steps;
        ck.meta["seed"] = config_.seed;
        ck.meta["desk_scale"] = config_.backbone.desk_scale;
        ck.meta["model"] = {{"widths", config_.backbone.widths},
                            {"head_width", config_.backbone.head_width},
                            {"classifier_width", config_.backbone.classifier_width},
                            {"in_channels", config_.backbone.in_channels}};
        ck.meta["disabled_cues"] = nlohmann::json::array();
        for (Cue c : config_.disabled_cues) ck.meta["disabled_cues"].push_back(to_string(c));
        store_parameters(ck, net_->params());
        store_optimizer(ck, adam, net_->params());
        ck.save(path);
    }

    std::string log_path() const { return (std::filesystem::path(run_dir_) / "train_log.jsonl").string(); }
    std::string final_ckpt_path() const { return (std::filesystem::path(run_dir_) / "ckpt-final.megc").string(); }
    std::string epoch_ckpt_path(long e) const {
        return (std::filesystem::path(run_dir_) / concat("ckpt-epoch-", e, ".megc")).string();
    }

    CorpusIndex index_;
    SupervisionSource<T>* source_;
    TrainConfig config_;
    std::string run_dir_;
    std::unique_ptr<SampleLoader<T>> loader_;
    std::unique_ptr<BatchPlan> plan_;
    std::unique_ptr<MegcNet<T>> net_;
    std::vector<FaceSample<T>> online_;
    std::map<int, SupervisionBundle<T>> bundles_;
};

template <typename T = float>
TrainResult<T> train_megc(const CorpusIndex& corpus, SupervisionSource<T>& source,
                          const TrainConfig& config, const std::string& run_dir) {
    Trainer<T> trainer(corpus, source, config, run_dir);
    return trainer.train();
}

}  // namespace megc

#include "ensembits/train.hpp"

#include "ensembits/error.hpp"
#include "ensembits/objective.hpp"
#include "ensembits/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace ensembits::training {

using nn::Matrix;

void TrainConfig::validate() const {
  if (!(beta >= 0.0)) throw Error("train config: beta must be non-negative");
  if (!(lambda >= 0.0)) throw Error("train config: lambda must be non-negative");
  if (!(lr_min >= 0.0 && lr_min <= lr_max)) throw Error("train config: need 0 <= lr_min <= lr_max");
  if (patience < 1) throw Error("train config: patience must be at least 1");
  if (max_epochs < 1) throw Error("train config: max_epochs must be at least 1");
  if (batch_size < 1) throw Error("train config: batch_size must be at least 1");
  if (!(grad_clip > 0.0)) throw Error("train config: grad_clip must be positive");
  if (frames_max < 1) throw Error("train config: frames_max must be at least 1");
  if (!(ema_decay > 0.0 && ema_decay <= 1.0)) throw Error("train config: ema_decay must lie in (0, 1]");
  if (codebook_sizes.empty()) throw Error("train config: need at least one codebook level");
  for (auto m : codebook_sizes)
    if (m < 1) throw Error("train config: codebook sizes must be positive");
}

std::string format_log_record(const EpochRecord& r) {
  std::ostringstream os;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  os << "epoch=" << r.epoch << " step=" << r.step << " lr=" << num(r.lr) << " loss=" << num(r.loss)
     << " recon_full=" << num(r.recon_full) << " recon_sub=" << num(r.recon_sub) << " commit_full=" << num(r.commit_full)
     << " commit_sub=" << num(r.commit_sub) << " distill=" << num(r.distill) << " val=" << num(r.val_loss);
  for (std::size_t l = 0; l < r.utilization.size(); ++l) os << " util" << l + 1 << '=' << num(r.utilization[l]);
  return os.str();
}

std::vector<Matrix> residue_multisets(std::span<const Ensemble> ensembles,
                                      const descriptors::DescriptorConfig& config,
                                      const descriptors::Standardizer& standardizer) {
  std::vector<Matrix> out;
  for (const auto& e : ensembles) {
    auto set = descriptors::compute_descriptors(e, config);
    standardizer.apply(set);
    for (std::size_t r = 0; r < set.residue_count(); ++r) out.emplace_back(set.residue(r));
  }
  return out;
}

double validation_loss(const nn::ModelParams& params, const quantizer::Codebooks& codebooks,
                       std::span<const Matrix> multisets, std::size_t chunk) {
  if (multisets.empty()) throw Error("validation_loss: no residues");
  chunk = std::max<std::size_t>(chunk, 1);
  double sum = 0.0;
  for (std::size_t lo = 0; lo < multisets.size(); lo += chunk) {
    const auto part = multisets.subspan(lo, std::min(chunk, multisets.size() - lo));
    for (double v : forward_branch(params, codebooks, part, true).recon) sum += v;
  }
  return sum / double(multisets.size());
}

namespace {

std::vector<Eigen::VectorXd> encode_all(const nn::ModelParams& params, std::span<const Matrix> sets,
                                        std::size_t chunk) {
  std::vector<Eigen::VectorXd> z;
  z.reserve(sets.size());
  const quantizer::Codebooks none;
  for (std::size_t lo = 0; lo < sets.size(); lo += chunk) {
    auto r = forward_branch(params, none, sets.subspan(lo, std::min(chunk, sets.size() - lo)), false);
    for (auto& v : r.latents) z.push_back(std::move(v));
  }
  return z;
}

quantizer::Codebooks init_codebooks(const nn::ModelParams& params, std::span<const Matrix> sets,
                                    const TrainConfig& cfg, std::mt19937_64& rng) {
  std::vector<Eigen::VectorXd> residual = encode_all(params, sets, 512);
  quantizer::Codebooks books;
  for (std::size_t m : cfg.codebook_sizes) {
    books.push_back(quantizer::kmeans_init(m, residual, cfg.kmeans_iterations, rng));
    for (auto& v : residual) v -= books.back().codewords.row(quantizer::nearest_code(books.back(), v)).transpose();
  }
  return books;
}

struct Snapshot {
  nn::ModelParams params;
  quantizer::Codebooks books;
  std::size_t epoch = 0;
  double val = 0.0;
};

}  // namespace

Checkpoint train(std::span<const Ensemble> train_set, std::span<const Ensemble> val_set,
                 const descriptors::DescriptorConfig& descriptor, const TrainConfig& config,
                 const TrainLogger& logger) {
  config.validate();
  descriptor.validate();
  if (train_set.empty()) throw Error("train: empty training split");
  if (val_set.empty()) throw Error("train: empty validation split");
  for (const auto& t : train_set)
    for (const auto& v : val_set)
      if (t.id == v.id) throw Error("train: protein '" + t.id + "' appears in both splits");
  for (auto split : {train_set, val_set})
    for (const auto& e : split)
      if (e.frame_count() > config.frames_max)
        throw Error("train: protein '" + e.id + "' has " + std::to_string(e.frame_count()) +
                    " frames, more than frames_max " + std::to_string(config.frames_max));

  // Descriptors and standardization.
  std::vector<descriptors::DescriptorSet> train_desc;
  for (const auto& e : train_set) train_desc.push_back(descriptors::compute_descriptors(e, descriptor));
  Checkpoint ck;
  ck.descriptor = descriptor;
  ck.standardizer = descriptors::fit_standardizer(train_desc);
  std::vector<Matrix> train_sets;
  for (auto& set : train_desc) {
    ck.standardizer.apply(set);
    for (std::size_t r = 0; r < set.residue_count(); ++r) train_sets.emplace_back(set.residue(r));
  }
  train_desc.clear();
  const std::vector<Matrix> val_sets = residue_multisets(val_set, descriptor, ck.standardizer);

  nn::ModelConfig mc = config.model;
  mc.input_dim = static_cast<std::size_t>(train_sets.front().cols());
  mc.slots = config.frames_max;
  for (const auto& s : val_sets)
    if (static_cast<std::size_t>(s.cols()) != mc.input_dim) throw Error("train: descriptor width differs between splits");

  std::mt19937_64 rng(config.seed);
  nn::ModelParams params = nn::init_params(rng(), mc);
  quantizer::Codebooks books = init_codebooks(params, train_sets, config, rng);

  const std::size_t threads =
      config.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.threads;
  const std::size_t n = train_sets.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.max_epochs;
  const std::size_t warmup = std::min(config.warmup, total_steps - 1);
  const LossWeights weights{config.beta, config.lambda};
  const AdamWOptions adam{0.9, 0.999, 1e-8, config.weight_decay};
  AdamWState state;

  Snapshot best{params, books, 0, validation_loss(params, books, val_sets)};
  if (!std::isfinite(best.val)) throw Error("train: non-finite validation loss before training");
  std::vector<double> history{best.val};
  if (logger) {
    EpochRecord r;
    r.val_loss = best.val;
    logger(r);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0, since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::vector<std::vector<double>> usage(books.size());
    for (std::size_t l = 0; l < books.size(); ++l) usage[l].assign(books[l].size(), 0.0);

    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t lo = s * config.batch_size, hi = std::min(n, lo + config.batch_size);
      std::vector<BatchItem> items;
      items.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        const Matrix& full = train_sets[order[i]];
        const std::size_t p = static_cast<std::size_t>(full.rows());
        BatchItem item;
        if (config.branch1_sampled) {
          const auto pick = sample_subset(p, rng);
          item.frames.resize(static_cast<Eigen::Index>(pick.size()), full.cols());
          for (std::size_t j = 0; j < pick.size(); ++j)
            item.frames.row(static_cast<Eigen::Index>(j)) = full.row(static_cast<Eigen::Index>(pick[j]));
        } else {
          item.frames = full;
        }
        item.subset = sample_subset(static_cast<std::size_t>(item.frames.rows()), rng);
        items.push_back(std::move(item));
      }

      BatchEvaluation ev = evaluate_batch(params, books, items, weights, config.chunk, threads);
      if (!std::isfinite(ev.loss)) {
        std::ostringstream os;
        os << "train: non-finite loss at epoch " << epoch << " step " << step << " (recon_full=" << ev.recon_full
           << " recon_sub=" << ev.recon_sub << " commit_full=" << ev.commit_full << " commit_sub=" << ev.commit_sub
           << " distill=" << ev.distill << ")";
        throw Error(os.str());
      }
      clip_global_norm(ev.grads, config.grad_clip);
      const double lr = cosine_lr(step, warmup, total_steps, config.lr_max, config.lr_min);
      adamw_step(params.tensors(), ev.grads, state, lr, adam);
      ++step;

      // Codebooks follow the assignments of both branches.
      for (std::size_t l = 0; l < books.size(); ++l) {
        std::vector<quantizer::Assignment> assigned;
        std::vector<Eigen::VectorXd> inputs;
        assigned.reserve(ev.quantized.size());
        for (const auto& q : ev.quantized) {
          const int code = q.record.tokens[l];
          assigned.push_back({code, q.residuals[l]});
          inputs.push_back(q.residuals[l]);
          usage[l][static_cast<std::size_t>(code)] += 1.0;
        }
        quantizer::ema_update(books[l], assigned, config.ema_decay);
        quantizer::revive_dead(books[l], inputs, rng, config.revive_threshold);
      }

      const double w = double(hi - lo) / double(n);
      rec.loss += w * ev.loss;
      rec.recon_full += w * ev.recon_full;
      rec.recon_sub += w * ev.recon_sub;
      rec.commit_full += w * ev.commit_full;
      rec.commit_sub += w * ev.commit_sub;
      rec.distill += w * ev.distill;
      rec.lr = lr;
    }

    const double val = validation_loss(params, books, val_sets);
    if (!std::isfinite(val)) throw Error("train: non-finite validation loss at epoch " + std::to_string(epoch));
    history.push_back(val);
    rec.step = step;
    rec.val_loss = val;
    for (const auto& u : usage) rec.utilization.push_back(quantizer::codebook_stats(u).utilization);
    if (logger) logger(rec);

    if (val < best.val) {
      best = Snapshot{params, books, epoch, val};
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  ck.model = std::move(best.params);
  ck.codebooks = std::move(best.books);
  ck.meta.epoch = best.epoch;
  ck.meta.val_loss = best.val;
  ck.meta.seed = config.seed;
  ck.meta.val_history = std::move(history);
  return ck;
}

}  // namespace ensembits::training

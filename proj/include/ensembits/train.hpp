#pragma once

#include "ensembits/checkpoint.hpp"
#include "ensembits/ensemble.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ensembits::training {

struct TrainConfig {
  double beta = 0.5;
  double lambda = 0.1;
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  std::size_t warmup = 1000;  // steps; clamped below the schedule length
  std::size_t max_epochs = 1000;
  std::size_t patience = 40;
  std::size_t batch_size = 256;  // residues
  double grad_clip = 1.0;
  std::size_t frames_max = 10;
  std::uint64_t seed = 0;
  double ema_decay = 0.99;  // 1 freezes the codebooks
  double weight_decay = 1e-5;
  std::vector<std::size_t> codebook_sizes{2048, 128, 128};
  nn::ModelConfig model;  // input_dim and slots are filled in by train()
  std::size_t kmeans_iterations = 10;
  double revive_threshold = 1.0;
  /// Branch 1 also draws its frame count uniformly instead of using every frame.
  bool branch1_sampled = false;
  std::size_t chunk = 64;    // residues per tape
  std::size_t threads = 1;   // 0 = hardware concurrency

  void validate() const;
};

/// One line of the training log, emitted after every epoch.
struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double recon_full = 0.0, recon_sub = 0.0, commit_full = 0.0, commit_sub = 0.0, distill = 0.0;
  double val_loss = 0.0;
  std::vector<double> utilization;  // per level, over this epoch's assignments
};

std::string format_log_record(const EpochRecord& r);

using TrainLogger = std::function<void(const EpochRecord&)>;

/// Standardized per-residue multisets (P x D each), protein-major.
std::vector<nn::Matrix> residue_multisets(std::span<const Ensemble> ensembles,
                                          const descriptors::DescriptorConfig& config,
                                          const descriptors::Standardizer& standardizer);

/// Mean branch-1 reconstruction loss over `multisets`.
double validation_loss(const nn::ModelParams& params, const quantizer::Codebooks& codebooks,
                       std::span<const nn::Matrix> multisets, std::size_t chunk = 512);

/// Validation history entry 0 is measured before the first update; early
/// stopping compares later epochs against the best so far.
Checkpoint train(std::span<const Ensemble> train_set, std::span<const Ensemble> val_set,
                 const descriptors::DescriptorConfig& descriptor, const TrainConfig& config,
                 const TrainLogger& logger = {});

}  // namespace ensembits::training

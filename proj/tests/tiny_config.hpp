#pragma once

#include "partmix/config.hpp"

namespace partmix::testing {

/// A few seconds of training: 6 train identities, 3 epochs of 2 batches.
inline ExperimentConfig tiny_config(Regularizer r = Regularizer::partmix) {
  ExperimentConfig c;
  c.dataset.num_train_ids = 6;
  c.dataset.num_test_ids = 4;
  c.dataset.images_per_id_per_modality = 4;
  c.feature_dim = 4;
  c.objective.regularizer = r;
  c.optimizer.lr = 1e-2;
  c.optimizer.decay_epochs = {2};
  c.schedule.warmup_epochs = 1;
  c.schedule.total_epochs = 3;
  c.schedule.batches_per_epoch = 2;
  c.batch.identities = 3;
  c.batch.images_per_identity = 4;
  c.ranks = {1, 2};
  return c;
}

}  // namespace partmix::testing

#pragma once

// Desk-scale experiment worlds built from seeded Gaussian mixtures.
//
// Traditional KD: a wide teacher is trained on a large pool; students train on a
// small seeded subset of a separate pool and are scored on a held-out split.
//
// Few-shot: class means of every task live in one shared low-dimensional subspace.
// Teacher and student backbones are pretrained on a source task; the target task
// presents k labelled examples per class; a third task supplies out-of-domain features.

#include <cstdint>
#include <string>

#include "tcs/datasets.hpp"
#include "tcs/harness.hpp"
#include "tcs/network.hpp"
#include "tcs/training.hpp"

namespace tcs {

struct KdWorldOptions {
  std::size_t classes = 10;
  std::size_t dim = 64;
  double separation = 0.4;
  std::size_t teacher_per_class = 600;
  std::size_t pool_per_class = 200;
  std::size_t test_per_class = 200;
  std::string teacher_arch = "mlp:128,128";
  std::size_t teacher_epochs = 30;
  double teacher_weight_decay = 5e-3;
  std::uint64_t seed = 2024;
};

struct KdWorld {
  KdWorldOptions options;
  Dataset teacher_train;
  Dataset pool;  // student subsets are drawn from here
  Dataset test;
  Network teacher;
};

inline KdWorld make_kd_world(const KdWorldOptions& o = {}) {
  const GaussianMixture mix = make_mixture(o.classes, o.dim, o.separation, Rng::derive(o.seed, 0));
  KdWorld w{o, mix.sample(o.teacher_per_class, Rng::derive(o.seed, 1), "teacher_train"),
            mix.sample(o.pool_per_class, Rng::derive(o.seed, 2), "pool"),
            mix.sample(o.test_per_class, Rng::derive(o.seed, 3), "test"), Network()};
  const ArchSpec arch = ArchSpec::parse(o.teacher_arch, o.dim, o.classes);
  TeacherTraining opt;
  opt.sgd.weight_decay = o.teacher_weight_decay;
  w.teacher = train_teacher(w.teacher_train, arch, o.teacher_epochs, Rng::derive(o.seed, 4), opt).net;
  return w;
}

inline RunInputs kd_inputs(const KdWorld& w) {
  RunInputs in;
  in.train = w.pool;
  in.test = w.test;
  in.teacher = &w.teacher;
  return in;
}

struct FewShotWorldOptions {
  std::size_t dim = 64;
  std::size_t latent_dim = 12;
  double separation = 1.5;
  std::size_t source_classes = 30;
  std::size_t source_per_class = 100;
  std::size_t target_classes = 10;
  std::size_t target_pool_per_class = 100;
  std::size_t test_per_class = 200;
  std::string teacher_arch = "mlp:256,64";
  std::string student_arch = "mlp:64,64";
  std::size_t teacher_epochs = 30;
  std::size_t student_epochs = 30;
  std::size_t student_source_per_class = 0;  // 0 uses the teacher's source set
  std::uint64_t seed = 7;
};

struct FewShotWorld {
  FewShotWorldOptions options;
  Dataset source;
  Dataset target_pool;  // k-shot sets are drawn from here
  Dataset test;
  Dataset ood;
  Network teacher;
  Network student;
};

inline FewShotWorld make_fewshot_world(const FewShotWorldOptions& o = {}) {
  const std::uint64_t basis = Rng::derive(o.seed, 0);
  const auto mixture = [&](std::size_t classes, std::uint64_t stream) {
    return make_subspace_mixture(classes, o.dim, o.latent_dim, o.separation, Rng::derive(o.seed, stream), basis);
  };
  const GaussianMixture source = mixture(o.source_classes, 1);
  const GaussianMixture target = mixture(o.target_classes, 2);
  const GaussianMixture other = mixture(o.target_classes, 3);
  FewShotWorld w;
  w.options = o;
  w.source = source.sample(o.source_per_class, Rng::derive(o.seed, 4), "source");
  w.target_pool = target.sample(o.target_pool_per_class, Rng::derive(o.seed, 5), "target_pool");
  w.test = target.sample(o.test_per_class, Rng::derive(o.seed, 6), "target_test");
  w.ood = other.sample(o.target_pool_per_class, Rng::derive(o.seed, 7), "ood");
  w.teacher = train_teacher(w.source, ArchSpec::parse(o.teacher_arch, o.dim, o.source_classes), o.teacher_epochs,
                            Rng::derive(o.seed, 8))
                  .net;
  const Dataset student_source =
      o.student_source_per_class ? source.sample(o.student_source_per_class, Rng::derive(o.seed, 9), "student_source")
                                 : w.source;
  w.student = train_teacher(student_source, ArchSpec::parse(o.student_arch, o.dim, o.source_classes), o.student_epochs,
                            Rng::derive(o.seed, 10))
                  .net;
  return w;
}

inline RunInputs fewshot_inputs(const FewShotWorld& w) {
  RunInputs in;
  in.train = w.target_pool;
  in.test = w.test;
  in.teacher = &w.teacher;
  in.student_backbone = &w.student;
  in.ood = w.ood;
  return in;
}

}  // namespace tcs

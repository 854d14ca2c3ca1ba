// Learning-rate sweep for the planted-recovery setting. Prints one JSON line
// per (learning rate, estimator) with recovery counts over the seeds.
//
//   lr_sweep --rates 0.01,0.03,0.1 --seeds 10 --iterations 20000

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nmpg/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Learning-rate sweep on planted linear instances"};
  std::vector<double> rates{0.001, 0.003, 0.01, 0.03, 0.1};
  std::size_t seeds = 10, samples = 128, batch = 8, seq_len = 1, dim = 64;
  std::uint64_t iterations = 20000;
  double magnitude = 6.0;
  std::vector<std::string> estimators{"vanilla", "residual", "smoothed_residual"};
  app.add_option("--rates", rates)->delimiter(',');
  app.add_option("--seeds", seeds);
  app.add_option("--samples", samples);
  app.add_option("--batch-size", batch);
  app.add_option("--sequence-length", seq_len);
  app.add_option("--dim", dim);
  app.add_option("--iterations", iterations);
  app.add_option("--magnitude", magnitude);
  app.add_option("--estimators", estimators)->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  using nmpg::EstimatorKind;
  for (double eta : rates) {
    for (const auto& name : estimators) {
      const EstimatorKind kind = nmpg::estimator_from_string(name);
      std::size_t recovered = 0, negative = 0, aborted = 0;
      std::vector<double> tails;
      for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
        nmpg::DataOptions opts;
        opts.batch_size = batch;
        opts.sequence_length = seq_len;
        auto inst = nmpg::make_planted_linear(dim, nmpg::SparsityPattern::make(2, 4), samples, 0.0,
                                              seed, opts);
        const auto m0 = nmpg::magnitude_mask(inst.task.weights(), inst.task.pattern());
        nmpg::TrainConfig tc{kind, eta, 0.99, seed, iterations, std::nullopt};
        try {
          const auto r = nmpg::train(inst.task, tc, m0, magnitude);
          if (nmpg::extract_final_mask(r.state.logits) == inst.planted_mask) ++recovered;
          double tail = 0.0;
          const std::size_t n = std::min<std::size_t>(1000, r.records.size());
          for (std::size_t i = r.records.size() - n; i < r.records.size(); ++i) {
            tail += r.records[i].residual;
          }
          tail /= static_cast<double>(n);
          tails.push_back(tail);
          if (tail < 0.0) ++negative;
        } catch (const nmpg::TrainingAborted&) {
          ++aborted;
          tails.push_back(std::nan(""));
        }
      }
      nlohmann::ordered_json j;
      j["learning_rate"] = eta;
      j["estimator"] = name;
      j["recovered"] = recovered;
      j["negative_tail"] = negative;
      j["aborted"] = aborted;
      j["tail_residuals"] = tails;
      std::printf("%s\n", j.dump().c_str());
      std::fflush(stdout);
    }
  }
  return 0;
}

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "interlock/train.hpp"

namespace interlock {

// Append-only CSV with one fixed header per run:
//   type,step,time_logical,time_wall,lr,c1..cn,e1..en
// train rows carry per-component losses in c1..cn; eval_train / eval_test
// rows carry per-head accuracies in c1..cn and top-m ensemble accuracies in
// e1..en. Doubles print with max_digits10 so identical runs produce identical
// bytes.
class MetricsWriter {
public:
    MetricsWriter(const std::string& path, int components);

    void train_row(const StepRecord& rec);
    void eval_row(const std::string& split, std::int64_t step, const EvalResult& eval);
    void flush();

private:
    std::ofstream out_;
    int n_;
};

std::string format_double(double v);

// Reads eval rows back out of a metrics file (the re-summarize path).
struct MetricsSummary {
    std::int64_t last_step = 0;
    std::vector<double> last_losses;
    std::vector<double> final_train_head_acc, final_test_head_acc;
    std::vector<double> final_train_ens_acc, final_test_ens_acc;
};
MetricsSummary read_metrics(const std::string& path);

}  // namespace interlock

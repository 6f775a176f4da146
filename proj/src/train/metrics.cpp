#include "interlock/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "interlock/errors.hpp"

namespace interlock {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

MetricsWriter::MetricsWriter(const std::string& path, int components) : n_(components) {
    out_.open(path, std::ios::trunc);
    if (!out_) throw DataError("cannot open metrics file for writing: " + path);
    out_ << "type,step,time_logical,time_wall,lr";
    for (int k = 1; k <= n_; ++k) out_ << ",c" << k;
    for (int k = 1; k <= n_; ++k) out_ << ",e" << k;
    out_ << "\n";
}

void MetricsWriter::train_row(const StepRecord& rec) {
    out_ << "train," << rec.step << "," << rec.time_logical << "," << format_double(rec.time_wall) << ","
         << format_double(rec.lr);
    for (int k = 0; k < n_; ++k) out_ << "," << format_double(rec.losses[static_cast<std::size_t>(k)]);
    for (int k = 0; k < n_; ++k) out_ << ",";
    out_ << "\n";
}

void MetricsWriter::eval_row(const std::string& split, std::int64_t step, const EvalResult& eval) {
    out_ << "eval_" << split << "," << step << ",,,";
    for (int k = 0; k < n_; ++k) out_ << "," << format_double(eval.head_acc[static_cast<std::size_t>(k)]);
    for (int k = 0; k < n_; ++k) out_ << "," << format_double(eval.ensemble_acc[static_cast<std::size_t>(k)]);
    out_ << "\n";
}

void MetricsWriter::flush() { out_.flush(); }

MetricsSummary read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open metrics file: " + path);
    std::string header;
    if (!std::getline(in, header)) throw DataError("empty metrics file: " + path);
    int n = 0;
    {
        std::istringstream hs(header);
        std::string col;
        while (std::getline(hs, col, ','))
            if (col.size() >= 2 && col[0] == 'c') ++n;
    }
    if (n == 0) throw DataError("metrics file has no component columns: " + path);

    MetricsSummary s;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<std::string> f;
        std::string tok;
        while (std::getline(ls, tok, ',')) f.push_back(tok);
        f.resize(static_cast<std::size_t>(5 + 2 * n));
        auto nums = [&](int from, int count) {
            std::vector<double> v;
            for (int i = from; i < from + count; ++i)
                if (!f[static_cast<std::size_t>(i)].empty()) v.push_back(std::stod(f[static_cast<std::size_t>(i)]));
            return v;
        };
        if (f[0] == "train") {
            s.last_step = std::stoll(f[1]);
            s.last_losses = nums(5, n);
        } else if (f[0] == "eval_train") {
            s.final_train_head_acc = nums(5, n);
            s.final_train_ens_acc = nums(5 + n, n);
        } else if (f[0] == "eval_test") {
            s.final_test_head_acc = nums(5, n);
            s.final_test_ens_acc = nums(5 + n, n);
        }
    }
    return s;
}

}  // namespace interlock

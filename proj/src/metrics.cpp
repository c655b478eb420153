#include "fenet/metrics.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <sstream>

namespace fenet {

namespace {

// shortest round-trippable decimal form
std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, int row) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw IoError("metrics: bad numeric field '" + s + "' in row " +
                      std::to_string(row));
    return v;
}

long long parse_ll(const std::string& s, int row) {
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw IoError("metrics: bad integer field '" + s + "' in row " +
                      std::to_string(row));
    return v;
}

} // namespace

MetricsWriter::MetricsWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot open metrics file for writing: " + path);
    out_ << kMetricsHeader << "\n";
    out_.flush();
}

void MetricsWriter::write(const UpdateRow& r) {
    out_ << "update," << r.iteration << ',' << r.env_steps << ",,,"
         << fmt(r.obs_nll) << ',' << fmt(r.policy_prior_nll) << ','
         << fmt(r.state_kl) << ',' << fmt(r.policy_kl) << ',';
    if (r.has_rl)
        out_ << fmt(r.epistemic_kl) << ',' << fmt(r.expected_reward) << ','
             << fmt(r.value_loss) << ',';
    else
        out_ << ",,,";
    out_ << fmt(r.grad_norm_theta) << ',' << fmt(r.grad_norm_phi) << ','
         << fmt(r.grad_norm_psi) << ',';
    if (r.has_value_update) out_ << fmt(r.grad_norm_omega);
    out_ << ',';
    if (r.wall_seconds) out_ << fmt(*r.wall_seconds);
    out_ << '\n';
    out_.flush();
}

void MetricsWriter::write(const EvalRow& r) {
    out_ << "eval," << r.iteration << ',' << r.env_steps << ','
         << fmt(r.return_mean) << ',' << fmt(r.return_std)
         << ",,,,,,,,,,,,";
    if (r.wall_seconds) out_ << fmt(*r.wall_seconds);
    out_ << '\n';
    out_.flush();
}

std::vector<TidyEvalPoint> validate_and_collect_evals(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("metrics: empty file " + path);
    if (line == std::string(kMetricsHeader) + "\r") line.pop_back();
    if (line != kMetricsHeader)
        throw IoError("metrics: bad header in " + path);

    std::vector<TidyEvalPoint> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (static_cast<int>(f.size()) != kMetricsColumns)
            throw IoError("metrics: row " + std::to_string(row) + " has " +
                          std::to_string(f.size()) + " fields, expected " +
                          std::to_string(kMetricsColumns));
        if (f[0] != "update" && f[0] != "eval")
            throw IoError("metrics: row " + std::to_string(row) +
                          " has unknown event_type '" + f[0] + "'");
        if (f[0] == "eval") {
            TidyEvalPoint p;
            p.iteration = parse_ll(f[1], row);
            p.env_steps = parse_ll(f[2], row);
            p.return_mean = parse_double(f[3], row);
            p.return_std = parse_double(f[4], row);
            out.push_back(p);
        } else {
            (void)parse_ll(f[1], row);
            (void)parse_ll(f[2], row);
            for (int i : {5, 6, 7, 8})
                (void)parse_double(f[static_cast<size_t>(i)], row);
        }
    }
    return out;
}

void write_tidy_csv(const std::string& path, const std::vector<TidyEvalPoint>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open tidy csv for writing: " + path);
    out << "iteration,env_steps,eval_return_mean,eval_return_std\n";
    for (const auto& r : rows)
        out << r.iteration << ',' << r.env_steps << ',' << fmt(r.return_mean)
            << ',' << fmt(r.return_std) << '\n';
}

} // namespace fenet

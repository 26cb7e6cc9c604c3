// pesentry - static PE malware/ransomware detection toolkit
// Wall-clock comparison of the OpenMP kernels against their serial references.
//
//   bench_kernels [--threads N] [--quick]

#include "pesentry/corpus.hpp"
#include "pesentry/gbdt.hpp"
#include "pesentry/kernels.hpp"
#include "pesentry/rng.hpp"
#include "pesentry/synth.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>

using namespace pesentry;

namespace {

double seconds(const std::function<void()>& fn, int reps) {
    fn(); // warm-up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void row(const char* name, double parallel, double serial, bool same) {
    std::printf("%-28s %10.4f s %10.4f s %7.2fx  %s\n", name, parallel, serial, serial / parallel,
                same ? "identical" : "DIFFERENT");
}

std::vector<double> random_vector(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform_real(rng) * 2.0 - 1.0;
    return v;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"compare OpenMP kernels with serial references"};
    int threads = 0;
    bool quick = false;
    app.add_option("--threads", threads);
    app.add_flag("--quick", quick);
    CLI11_PARSE(app, argc, argv);
    if (threads > 0) kernels::set_thread_count(threads);

    std::printf("threads: %d\n", kernels::thread_count());
    std::printf("%-28s %12s %12s %8s\n", "kernel", "parallel", "serial", "speedup");
    Rng rng(7);
    const int reps = quick ? 1 : 3;

    {
        const std::size_t m = 128, k = quick ? 512 : 2381, n = 512;
        auto a = random_vector(m * k, rng), b = random_vector(n * k, rng);
        std::vector<double> c1(m * n), c2(m * n);
        double tp = seconds([&] { kernels::matmul_abt(a, b, c1, m, k, n); }, reps);
        double ts = seconds([&] { kernels::matmul_abt_serial(a, b, c2, m, k, n); }, reps);
        row("matmul A*B^T (128x2381x512)", tp, ts, c1 == c2);
    }
    {
        const std::size_t m = 128, k = 512, n = 128;
        auto a = random_vector(m * k, rng), b = random_vector(k * n, rng);
        std::vector<double> c1(m * n), c2(m * n);
        double tp = seconds([&] { kernels::matmul_ab(a, b, c1, m, k, n); }, reps);
        double ts = seconds([&] { kernels::matmul_ab_serial(a, b, c2, m, k, n); }, reps);
        row("matmul A*B (128x512x128)", tp, ts, c1 == c2);
    }
    {
        const std::size_t n_rows = quick ? 200 : 600, d = quick ? 40 : 120;
        Matrix x(n_rows, d);
        std::vector<int> y(n_rows);
        for (std::size_t i = 0; i < n_rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (x(i, j) = uniform_real(rng));
            y[i] = s > static_cast<double>(d) / 2.0 ? 1 : 0;
        }
        GbdtConfig cfg = GbdtConfig::xgboost_like(2, 1);
        cfg.num_rounds = quick ? 5 : 20;
        GbdtTrainResult fast, slow;
        double tp = seconds([&] { fast = gbdt_train(x, y, cfg, nullptr, SplitSearch::presorted_parallel); }, 1);
        double ts = seconds([&] { slow = gbdt_train(x, y, cfg, nullptr, SplitSearch::per_node_serial); }, 1);
        row("gbdt training (split search)", tp, ts, fast.model == slow.model);
    }
    {
        namespace fs = std::filesystem;
        const fs::path dir = fs::temp_directory_path() / "pesentry_bench_corpus";
        fs::remove_all(dir);
        auto corpus = generate_synthetic_corpus(SynthProfile::uniform(quick ? 5 : 30), 42, dir);
        std::vector<fs::path> files;
        for (const auto& e : corpus.entries) files.push_back(dir / e.path);
        std::vector<RowResult> p, s;
        double tp = seconds([&] { p = extract_rows(files, ExtractMode::vector); }, reps);
        double ts = seconds([&] { s = extract_rows_serial(files, ExtractMode::vector); }, reps);
        bool same = p.size() == s.size();
        for (std::size_t i = 0; same && i < p.size(); ++i) same = p[i].values == s[i].values && p[i].digest == s[i].digest;
        row("feature extraction", tp, ts, same);
        fs::remove_all(dir);
    }
    return 0;
}

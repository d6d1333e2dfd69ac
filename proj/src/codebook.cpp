// SPDX-License-Identifier: Apache-2.0
#include "bae/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "bae/binio.hpp"
#include "bae/error.hpp"

namespace bae {

std::string to_string(CodebookKind kind) {
    switch (kind) {
        case CodebookKind::Sensing: return "sensing";
        case CodebookKind::Narrow: return "narrow";
        case CodebookKind::Custom: return "custom";
    }
    return "custom";
}

namespace {

Codebook dft_family(int n_bs, int os, CodebookKind kind) {
    if (n_bs < 1) throw std::invalid_argument("codebook: n_bs must be >= 1");
    if (os < 1) throw std::invalid_argument("codebook: oversampling factor must be >= 1");
    const int q_total = n_bs * os;
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_bs));
    Codebook cb;
    cb.kind = kind;
    cb.oversampling = os;
    cb.beams.reserve(q_total);
    for (int q = 0; q < q_total; ++q) {
        BeamVector b{Eigen::VectorXcd(n_bs)};
        for (int n = 0; n < n_bs; ++n) {
            // Reduce n*q modulo Q' first so the phase argument stays exact for large codebooks.
            const long long k = (static_cast<long long>(n) * q) % q_total;
            b.w[n] = std::polar(scale, -2.0 * std::numbers::pi * static_cast<double>(k) / q_total);
        }
        cb.beams.push_back(std::move(b));
    }
    return cb;
}

}  // namespace

Codebook dft_codebook(int n_bs) { return dft_family(n_bs, 1, CodebookKind::Sensing); }

Codebook odft_codebook(int n_bs, int os) { return dft_family(n_bs, os, CodebookKind::Narrow); }

std::vector<int> sensing_indices(int n_bs, int m_w) {
    if (m_w < 1 || m_w > n_bs) throw std::invalid_argument("sensing beams: need 1 <= m_w <= n_bs");
    std::vector<int> idx(m_w);
    for (int i = 0; i < m_w; ++i) idx[i] = static_cast<int>((static_cast<long long>(i) * n_bs) / m_w);
    return idx;
}

Codebook sensing_codebook(int n_bs, int m_w) {
    const auto full = dft_codebook(n_bs);
    Codebook cb;
    cb.kind = CodebookKind::Sensing;
    for (int i : sensing_indices(n_bs, m_w)) cb.beams.push_back(full.beams[i]);
    return cb;
}

BeamVector quantize_phases(const BeamVector& w, int bits) {
    if (bits < 1 || bits > 30) throw std::invalid_argument("quantize_phases: bits must be in [1, 30]");
    const double step = 2.0 * std::numbers::pi / static_cast<double>(1u << bits);
    BeamVector out{Eigen::VectorXcd(w.w.size())};
    for (Eigen::Index i = 0; i < w.w.size(); ++i) {
        const double phase = std::arg(w.w[i]);
        out.w[i] = std::polar(std::abs(w.w[i]), std::round(phase / step) * step);
    }
    return out;
}

BeamVector mrt_beam(const ChannelVector& h) {
    if (h.h.size() == 0 || h.h.cwiseAbs().maxCoeff() == 0.0)
        throw DegenerateInputError("mrt_beam: zero channel");
    const double scale = 1.0 / std::sqrt(static_cast<double>(h.h.size()));
    BeamVector out{Eigen::VectorXcd(h.h.size())};
    for (Eigen::Index i = 0; i < h.h.size(); ++i) out.w[i] = std::polar(scale, std::arg(h.h[i]));
    return out;
}

BeamVector best_quantized_beam(const ChannelVector& h, int bits) {
    if (bits < 1 || bits > 8) throw std::invalid_argument("best_quantized_beam: bits must be in [1, 8]");
    BeamVector best = quantize_phases(mrt_beam(h), bits);
    const auto n = h.h.size();
    const int levels = 1 << bits;
    const double step = 2.0 * std::numbers::pi / levels;
    const double amp = 1.0 / std::sqrt(static_cast<double>(n));

    std::vector<double> breaks;
    breaks.reserve(static_cast<std::size_t>(n) * levels);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double a = std::arg(h.h[i]);
        for (int k = 0; k < levels; ++k) {
            double t = std::fmod((k + 0.5) * step - a, 2.0 * std::numbers::pi);
            if (t < 0.0) t += 2.0 * std::numbers::pi;
            breaks.push_back(t);
        }
    }
    std::sort(breaks.begin(), breaks.end());

    double best_gain = std::norm(h.h.dot(best.w));
    BeamVector cand{Eigen::VectorXcd(n)};
    for (std::size_t b = 0; b < breaks.size(); ++b) {
        const double hi = b + 1 < breaks.size() ? breaks[b + 1] : breaks.front() + 2.0 * std::numbers::pi;
        const double theta = 0.5 * (breaks[b] + hi);
        for (Eigen::Index i = 0; i < n; ++i)
            cand.w[i] = std::polar(amp, std::round((theta + std::arg(h.h[i])) / step) * step);
        const double g = std::norm(h.h.dot(cand.w));
        if (g > best_gain) {
            best_gain = g;
            best.w = cand.w;
        }
    }
    return best;
}

void export_codebook(const std::filesystem::path& path, const Codebook& cb) {
    std::vector<ChannelVector> rows;
    rows.reserve(cb.beams.size());
    for (const auto& b : cb.beams) rows.push_back({b.w});
    export_channels(path, rows);
    const nlohmann::json side{{"n_bs", cb.n_bs()}, {"os", cb.oversampling}, {"kind", to_string(cb.kind)}};
    std::ofstream out(path.string() + ".json");
    if (!out) throw FormatError(FormatError::Kind::Io, "cannot write codebook sidecar");
    out << side.dump(2) << '\n';
}

}  // namespace bae

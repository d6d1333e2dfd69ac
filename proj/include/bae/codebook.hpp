// SPDX-License-Identifier: Apache-2.0
//
// Analog beamforming codebooks under the constant-modulus constraint.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bae/channel.hpp"

namespace bae {

struct BeamVector {
    Eigen::VectorXcd w;
};

enum class CodebookKind { Sensing, Narrow, Custom };

struct Codebook {
    std::vector<BeamVector> beams;
    CodebookKind kind = CodebookKind::Custom;
    int oversampling = 1;

    int size() const { return static_cast<int>(beams.size()); }
    int n_bs() const { return beams.empty() ? 0 : static_cast<int>(beams.front().w.size()); }
};

std::string to_string(CodebookKind kind);

/// Plain DFT codebook: beam q entry n = exp(-j 2 pi n q / n_bs) / sqrt(n_bs).
Codebook dft_codebook(int n_bs);

/// Oversampled DFT: n_bs * os beams, beam q entry n = exp(-j 2 pi n q / (n_bs os)) / sqrt(n_bs).
Codebook odft_codebook(int n_bs, int os);

/// The M_w sensing beams: `m_w` evenly spaced beams of the n_bs-DFT codebook
/// (all of them when m_w == n_bs). Indices are floor(i * n_bs / m_w).
Codebook sensing_codebook(int n_bs, int m_w);
std::vector<int> sensing_indices(int n_bs, int m_w);

/// Rounds every entry phase to the nearest multiple of 2 pi / 2^bits.
BeamVector quantize_phases(const BeamVector& w, int bits);

/// Phase-aligned constant-modulus beam maximizing |h^H w|^2. Zero entries of h
/// get phase 0. Throws DegenerateInputError for h == 0.
BeamVector mrt_beam(const ChannelVector& h);

/// Constant-modulus beam with phases restricted to multiples of 2 pi / 2^bits that
/// maximizes |h^H w|^2 exactly. The optimum is constant between the N 2^bits
/// reference angles at which some entry changes its rounded phase, so one
/// candidate per interval is enough. Never below quantize_phases(mrt_beam(h), bits).
BeamVector best_quantized_beam(const ChannelVector& h, int bits);

/// Complex-binary rows (see export_channels) plus a JSON sidecar `<path>.json`
/// holding {n_bs, os, kind}.
void export_codebook(const std::filesystem::path& path, const Codebook& cb);

}  // namespace bae

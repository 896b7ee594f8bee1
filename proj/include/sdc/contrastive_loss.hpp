#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "sdc/errors.hpp"

namespace sdc {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

// Row-normalized copy; throws if any row has zero norm (cosine undefined).
template <typename Scalar>
MatX<Scalar> normalized_rows(const MatX<Scalar>& m, const char* what) {
    MatX<Scalar> out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const Scalar n = m.row(i).norm();
        if (n == Scalar(0)) {
            throw ZeroVector(std::string(what) + ": row " + std::to_string(i) + " has zero norm");
        }
        out.row(i) = m.row(i) / n;
    }
    return out;
}

// Mean over rows of [logsumexp_j(S_ij / tau) - S_ii / tau].
template <typename Scalar>
Scalar contrast_from_similarity(const MatX<Scalar>& S, Scalar tau) {
    const Eigen::Index m = S.rows();
    Scalar total = Scalar(0);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Scalar rmax = S.row(i).maxCoeff() / tau;
        Scalar sum = Scalar(0);
        for (Eigen::Index j = 0; j < m; ++j) {
            sum += std::exp(S(i, j) / tau - rmax);
        }
        total += std::log(sum) + rmax - S(i, i) / tau;
    }
    return total / static_cast<Scalar>(m);
}

} // namespace detail

// Contrast(A, B) = -(1/M) sum_i log[ exp(cos(a_i,b_i)/tau) / sum_j exp(cos(a_i,b_j)/tau) ].
// Rows of A and B are paired; mismatched pairs inside the batch act as negatives.
template <typename Scalar>
Scalar contrast_term(const MatX<Scalar>& A, const MatX<Scalar>& B, Scalar tau) {
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw DimensionMismatch("contrast_term: A and B must have identical shape");
    }
    if (A.rows() < 1) throw DimensionMismatch("contrast_term: empty batch");
    if (!(tau > Scalar(0))) throw Error("contrast_term: temperature must be positive");
    const MatX<Scalar> Ah = detail::normalized_rows(A, "contrast_term A");
    const MatX<Scalar> Bh = detail::normalized_rows(B, "contrast_term B");
    const MatX<Scalar> S = Ah * Bh.transpose();
    return detail::contrast_from_similarity(S, tau);
}

// Symmetric InfoNCE: 0.5 * [Contrast(A, B) + Contrast(B, A)]. The second term
// reuses the transposed similarity matrix, so the symmetry is exact.
template <typename Scalar>
Scalar infonce_loss(const MatX<Scalar>& A, const MatX<Scalar>& B, Scalar tau) {
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw DimensionMismatch("infonce_loss: A and B must have identical shape");
    }
    if (A.rows() < 1) throw DimensionMismatch("infonce_loss: empty batch");
    if (!(tau > Scalar(0))) throw Error("infonce_loss: temperature must be positive");
    const MatX<Scalar> Ah = detail::normalized_rows(A, "infonce A");
    const MatX<Scalar> Bh = detail::normalized_rows(B, "infonce B");
    const MatX<Scalar> S = Ah * Bh.transpose();
    const MatX<Scalar> St = S.transpose();
    return Scalar(0.5) * (detail::contrast_from_similarity(S, tau) +
                          detail::contrast_from_similarity(St, tau));
}

// InfoNCE value plus analytic gradient with respect to A (the predicted side).
//
// With S_ij = cos(a_i, b_j), P = row softmax of S/tau, Q = column softmax:
//   dL/dS = (P + Q - 2I) / (2 M tau)
//   da_i  = [ sum_j G_ij bhat_j - (sum_j G_ij S_ij) ahat_i ] / ||a_i||
template <typename Scalar>
Scalar infonce_loss_grad(const MatX<Scalar>& A, const MatX<Scalar>& B, Scalar tau,
                         MatX<Scalar>& grad_A) {
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw DimensionMismatch("infonce_loss_grad: A and B must have identical shape");
    }
    const Eigen::Index m = A.rows();
    if (m < 1) throw DimensionMismatch("infonce_loss_grad: empty batch");
    if (!(tau > Scalar(0))) throw Error("infonce_loss_grad: temperature must be positive");

    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> a_norm(m);
    MatX<Scalar> Ah(m, A.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
        const Scalar n = A.row(i).norm();
        if (n == Scalar(0)) throw ZeroVector("infonce_loss_grad: zero-norm row in A");
        a_norm(i) = n;
        Ah.row(i) = A.row(i) / n;
    }
    const MatX<Scalar> Bh = detail::normalized_rows(B, "infonce_loss_grad B");
    const MatX<Scalar> S = Ah * Bh.transpose();

    // Row and column softmax of S / tau, shifted for stability.
    MatX<Scalar> P(m, m), Q(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Scalar rmax = S.row(i).maxCoeff() / tau;
        Scalar sum = Scalar(0);
        for (Eigen::Index j = 0; j < m; ++j) {
            P(i, j) = std::exp(S(i, j) / tau - rmax);
            sum += P(i, j);
        }
        P.row(i) /= sum;
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        const Scalar cmax = S.col(j).maxCoeff() / tau;
        Scalar sum = Scalar(0);
        for (Eigen::Index i = 0; i < m; ++i) {
            Q(i, j) = std::exp(S(i, j) / tau - cmax);
            sum += Q(i, j);
        }
        Q.col(j) /= sum;
    }

    const Scalar scale = Scalar(1) / (Scalar(2) * static_cast<Scalar>(m) * tau);
    MatX<Scalar> G = (P + Q) * scale;
    for (Eigen::Index i = 0; i < m; ++i) G(i, i) -= Scalar(2) * scale;

    grad_A.resize(m, A.cols());
    grad_A.noalias() = G * Bh;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> diag = (G.array() * S.array()).rowwise().sum();
    grad_A.noalias() -= diag.asDiagonal() * Ah;
    grad_A.array().colwise() /= a_norm.array();

    const MatX<Scalar> St = S.transpose();
    return Scalar(0.5) * (detail::contrast_from_similarity(S, tau) +
                          detail::contrast_from_similarity(St, tau));
}

} // namespace sdc

#pragma once

#include "mfg/core.hpp"
#include "oracles.hpp"

#include <random>

namespace mfg::fixtures {

/// A = 0.2, B = G = Q = R = 1, Gamma = 1.2, GammaF = 0, Qf = 0, T = 3:
/// the limit Riccati system escapes inside (0, 3).
inline ModelParams escaping_example() {
  return ModelParams::scalar(0.2, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.2, 0.0, 0.0,
                             0.0, 3.0);
}

/// Same with Gamma = 0.2; the limit system exists on [0, 3].
inline ModelParams solvable_example(double eta = 0.0, double etaF = 0.0,
                                    double D = 0.0) {
  return ModelParams::scalar(0.2, 1.0, 1.0, D, 1.0, 1.0, 0.0, 0.2, 0.0, eta,
                             etaF, 3.0);
}

/// Coupling switched off: G = Gamma = GammaF = 0.
inline ModelParams decoupled(int n = 1, double T = 1.0) {
  ModelParams p;
  p.A = Matrix::Identity(n, n) * 0.3;
  if (n > 1) p.A(0, 1) = 0.5;
  p.B = Matrix::Identity(n, n);
  p.G = Matrix::Zero(n, n);
  p.D = Matrix::Identity(n, n) * 0.4;
  p.Q = Matrix::Identity(n, n);
  p.R = Matrix::Identity(n, n) * 2.0;
  p.Qf = Matrix::Identity(n, n) * 0.5;
  p.Gamma = Matrix::Zero(n, n);
  p.GammaF = Matrix::Zero(n, n);
  p.eta = Vector::Constant(n, 0.7);
  p.etaF = Vector::Constant(n, -0.3);
  p.T = T;
  return p;
}

/// Q = Qf = 0 and eta = etaF = 0.
inline ModelParams zero_cost(int n = 1) {
  ModelParams p = decoupled(n);
  p.G = Matrix::Identity(n, n) * 0.5;
  p.Gamma = Matrix::Identity(n, n) * 0.8;
  p.Q.setZero();
  p.Qf.setZero();
  p.eta.setZero();
  p.etaF.setZero();
  return p;
}

/// Random coupled instance with n x n data, control dimension n1 and noise
/// dimension n2.
inline ModelParams random_coupled(std::mt19937_64& gen, int n, double T,
                                  int n1 = 1, int n2 = 1) {
  ModelParams p;
  p.A = oracle::random_matrix(gen, n, n, 0.5);
  p.B = oracle::random_matrix(gen, n, n1, 1.0);
  p.G = oracle::random_matrix(gen, n, n, 0.5);
  p.D = oracle::random_matrix(gen, n, n2, 0.5);
  p.Q = oracle::random_psd(gen, n);
  p.R = oracle::random_psd(gen, n1) + Matrix::Identity(n1, n1);
  p.Qf = oracle::random_psd(gen, n);
  p.Gamma = oracle::random_matrix(gen, n, n, 1.0);
  p.GammaF = oracle::random_matrix(gen, n, n, 1.0);
  p.eta = oracle::random_matrix(gen, n, 1, 1.0);
  p.etaF = oracle::random_matrix(gen, n, 1, 1.0);
  p.T = T;
  return p;
}

}  // namespace mfg::fixtures

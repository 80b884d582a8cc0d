#include "epglmm/ep_engine.hpp"
#include "epglmm/matrix_kernels.hpp"
#include "epglmm/probit_special.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace epglmm;

namespace {

constexpr double kPi = std::numbers::pi;

// Moments of exp(eta0 + x^T eta1 + vech(x x^T)^T eta2) computed directly from
// the precision matrix P = -2 * (quadratic form matrix).
struct GaussMoments {
  double log_mass;
  Vector mean;
  Matrix cov;
};

Matrix quad_form_matrix(const NaturalParams& p) {
  const int d = p.dim();
  // Coefficient of x_i x_j (i > j) in vech(xx^T)^T eta2 is eta2_k; the
  // symmetric matrix carries half of it on each side.
  Matrix a(d, d);
  int k = 0;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i, ++k) a(i, j) = a(j, i) = (i == j ? 1.0 : 0.5) * p.eta2[k];
  return a;
}

GaussMoments gauss_moments(const NaturalParams& p) {
  const int d = p.dim();
  const Matrix prec = -2.0 * quad_form_matrix(p);
  const Matrix cov = prec.inverse();
  const Vector eta1 = p.eta1;
  const Vector mean = cov * eta1;
  const double log_mass = p.eta0 + 0.5 * d * std::log(2.0 * kPi) - 0.5 * std::log(prec.determinant()) +
                          0.5 * eta1.dot(mean);
  return {log_mass, mean, cov};
}

NaturalParams from_moments(const Vector& mean, const Matrix& cov, double eta0 = 0.0) {
  const int d = static_cast<int>(mean.size());
  const Matrix prec = cov.inverse();
  NaturalParams p = NaturalParams::zero(d);
  p.eta0 = eta0;
  p.eta1 = prec * mean;
  int k = 0;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i, ++k) p.eta2[k] = (i == j ? -0.5 : -1.0) * prec(i, j);
  return p;
}

double scaled_err(double got, double want) { return std::abs(got - want) / std::max(1.0, std::abs(want)); }

Group make_group(const std::vector<int>& y, const Matrix& xf, const Matrix& xr) {
  Group g;
  g.label = "g";
  g.y = y;
  g.xf = xf;
  g.xr = xr;
  return g;
}

Group random_group(std::mt19937_64& rng, int n, int df, int dr) {
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  Group g;
  g.label = "r";
  g.xf.resize(n, df);
  g.xr.resize(n, dr);
  for (int j = 0; j < n; ++j) {
    g.y.push_back(coin(rng) ? 1 : 0);
    g.xf(j, 0) = 1.0;
    for (int k = 1; k < df; ++k) g.xf(j, k) = ud(rng);
    g.xr.row(j) = g.xf.row(j).head(dr);
  }
  return g;
}

double log_cdf_ref(double x) { return static_cast<double>(std::log(oracle::cdf_ld(x))); }

}  // namespace

TEST_CASE("a_n closed-form cases and the normalizer identity") {
  NaturalParams p = NaturalParams::zero(1);
  p.eta2[0] = -0.5;
  CHECK(std::abs(a_n(p)) < 1e-15);
  p.eta1[0] = 1.0;
  CHECK(a_n(p) == doctest::Approx(0.5).epsilon(1e-15));
  NaturalParams q = NaturalParams::zero(2);
  q.eta2 << -0.5, 0.0, -0.5;
  CHECK(std::abs(a_n(q)) < 1e-15);

  // One-dimensional normalizer by Gauss-Hermite after rescaling x = z / sqrt(-eta2).
  const auto rule = oracle::hermite_rule(80);
  for (double e1 : {-2.0, 0.3, 1.7}) {
    for (double e2 : {-0.2, -1.3}) {
      NaturalParams r = NaturalParams::zero(1);
      r.eta1[0] = e1;
      r.eta2[0] = e2;
      const double s = 1.0 / std::sqrt(-e2);
      double integral = 0.0;
      for (std::size_t k = 0; k < rule.nodes.size(); ++k) integral += rule.weights[k] * std::exp(e1 * s * rule.nodes[k]);
      integral *= s;
      CHECK(std::log(integral) == doctest::Approx(0.5 * std::log(2.0 * kPi) + a_n(r)).epsilon(1e-12));
    }
  }
  NaturalParams bad = NaturalParams::zero(1);
  bad.eta2[0] = 0.1;
  CHECK_THROWS_AS(a_n(bad), NumericalError);
  CHECK_FALSE(bad.is_proper());
}

TEST_CASE("skew-normal projection anchor") {
  NaturalParams in = NaturalParams::zero(1);
  in.eta2[0] = -0.5;
  const SiteContext ctx{0.0, SmallVec::Ones(1)};
  const NaturalParams out = k_probit(in, ctx);
  const double var = 1.0 - 1.0 / kPi;
  const double mu = std::sqrt(1.0 / kPi);
  CHECK(out.eta2[0] == doctest::Approx(-1.0 / (2.0 * var)).epsilon(1e-12));
  CHECK(std::abs(out.eta2[0] - (-0.733471)) < 1e-6);
  CHECK(out.eta1[0] == doctest::Approx(mu / var).epsilon(1e-12));
  CHECK(std::abs(out.eta1[0] / (-2.0 * out.eta2[0]) - mu) < 1e-12);

  // Zeroth moment: integral of Phi(x) exp(-x^2/2) is sqrt(2 pi) / 2.
  const NaturalParams full = project_probit_site(in, ctx);
  CHECK(full.eta0 == doctest::Approx(std::log(0.5) - a_n(out)).epsilon(1e-13));
  CHECK(gauss_moments(full).log_mass == doctest::Approx(std::log(0.5 * std::sqrt(2.0 * kPi))).epsilon(1e-13));
}

TEST_CASE("c1 = 0 leaves the Gaussian part unchanged") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd;
  for (int d = 1; d <= 4; ++d) {
    Vector mean(d);
    for (int k = 0; k < d; ++k) mean[k] = nd(rng);
    NaturalParams in = from_moments(mean, oracle::random_spd(rng, d, 0.3, 3.0), 0.7);
    const double c0 = nd(rng);
    const NaturalParams out = project_probit_site(in, SiteContext{c0, SmallVec::Zero(d)});
    CHECK((out.eta1 - in.eta1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.eta2 - in.eta2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(out.eta0 - in.eta0 - log_cdf_ref(c0)) < 1e-12);
  }
}

TEST_CASE("projection matches quadrature moments of the tilted density") {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int rep = 0; rep < 60; ++rep) {
    const int d = 1 + rep % 3;
    Vector mean(d);
    for (int k = 0; k < d; ++k) mean[k] = nd(rng);
    const Matrix cov = oracle::random_spd(rng, d, 0.2, 2.0);
    const NaturalParams in = from_moments(mean, cov, 0.3 * nd(rng));
    SiteContext ctx;
    ctx.c0 = nd(rng);
    ctx.c1 = SmallVec(d);
    for (int k = 0; k < d; ++k) ctx.c1[k] = nd(rng);

    const GaussMoments gin = gauss_moments(in);
    const Vector c1 = ctx.c1;
    const double c0 = ctx.c0;
    const auto tilt = [&](const Vector& x) { return static_cast<double>(oracle::cdf_ld(c0 + c1.dot(x))); };
    const auto ref = oracle::gaussian_weighted_moments(tilt, gin.mean, gin.cov, d == 3 ? 40 : 80);

    const GaussMoments got = gauss_moments(project_probit_site(in, ctx));
    worst = std::max(worst, std::abs(std::exp(got.log_mass - gin.log_mass) / ref.mass - 1.0));
    for (int i = 0; i < d; ++i) {
      worst = std::max(worst, scaled_err(got.mean[i], ref.mean[i]));
      for (int j = 0; j < d; ++j) worst = std::max(worst, scaled_err(got.cov(i, j), ref.cov(i, j)));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("prior message encodes -Sigma^{-1}/2") {
  Matrix s(2, 2);
  s << 0.53, -0.36, -0.36, 0.92;
  const NaturalParams p = prior_message(s);
  CHECK(p.eta1.cwiseAbs().maxCoeff() == 0.0);
  CHECK((quad_form_matrix(p) + 0.5 * s.inverse()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(p.eta0 == doctest::Approx(-0.5 * std::log((2.0 * kPi * s).determinant())).epsilon(1e-14));
  CHECK(std::abs(gauss_moments(p).log_mass) < 1e-14);
  CHECK_THROWS_AS(prior_message(-Matrix::Identity(2, 2)), NumericalError);
}

TEST_CASE("starting values") {
  const Vector beta = Vector::Zero(1);
  const Vector xf = Vector::Ones(1);
  const SmallVec xr = SmallVec::Ones(1);
  const NaturalParams p1 = ep_start_site(1, xf, xr, beta, SmallVec::Zero(1));
  CHECK(p1.eta0 == 0.0);
  CHECK(p1.eta1[0] == doctest::Approx(std::sqrt(2.0 / kPi)).epsilon(1e-15));
  CHECK(p1.eta2[0] == doctest::Approx(-1.0 / kPi).epsilon(1e-15));
  const NaturalParams p0 = ep_start_site(0, xf, xr, beta, SmallVec::Zero(1));
  CHECK(p0.eta1[0] == doctest::Approx(-std::sqrt(2.0 / kPi)).epsilon(1e-15));
  CHECK(p0.eta2[0] == doctest::Approx(-1.0 / kPi).epsilon(1e-15));

  // d = 2: the quadratic model must match the value-free Taylor expansion of
  // zeta(a(u)) at u_hat (gradient and Hessian by finite differences).
  Vector b(3);
  b << 0.3, -0.8, 0.5;
  Vector f(3);
  f << 1.0, 0.4, 0.9;
  SmallVec r(2);
  r << 1.0, 0.4;
  SmallVec uh(2);
  uh << 0.2, -0.6;
  for (int y : {0, 1}) {
    const NaturalParams p = ep_start_site(y, f, r, b, uh);
    const double s = 2.0 * y - 1.0;
    const auto zeta_ref = [&](const Vector& u) {
      return static_cast<double>(std::log(2.0L * oracle::cdf_ld(s * (b.dot(f) + Vector(r).dot(u)))));
    };
    const auto model = [&](const Vector& u) { return u.dot(Vector(p.eta1)) + vech(u * u.transpose()).dot(Vector(p.eta2)); };
    const double h = 1e-4;
    const Vector u0 = uh;
    for (int i = 0; i < 2; ++i) {
      Vector e = Vector::Zero(2);
      e[i] = h;
      const double g_ref = (zeta_ref(u0 + e) - zeta_ref(u0 - e)) / (2 * h);
      const double g_mod = (model(u0 + e) - model(u0 - e)) / (2 * h);
      CHECK(g_mod == doctest::Approx(g_ref).epsilon(1e-6));
      for (int j = 0; j < 2; ++j) {
        Vector e2 = Vector::Zero(2);
        e2[j] = h;
        const auto hess = [&](const auto& fn) {
          return (fn(u0 + e + e2) - fn(u0 + e - e2) - fn(u0 - e + e2) + fn(u0 - e - e2)) / (4 * h * h);
        };
        CHECK(hess(model) == doctest::Approx(hess(zeta_ref)).epsilon(1e-4));
      }
    }
  }
}

TEST_CASE("one-site groups are exact") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int rep = 0; rep < 300; ++rep) {
    const int dr = 1 + rep % 3;
    const int df = dr + rep % 2;
    Group g = random_group(rng, 1, df, dr);
    Vector beta(df);
    for (int k = 0; k < df; ++k) beta[k] = nd(rng);
    const Matrix sigma = oracle::random_spd(rng, dr, 0.2, 3.0);
    const EPGroupState st = ep_group_loop(g, beta, sigma, ep_start_sites(g, beta, SmallVec::Zero(dr)), EpOptions{});
    CHECK(st.converged);
    CHECK(st.iterations <= 2);
    const Vector xr = g.xr.row(0).transpose();
    const double s = 2.0 * g.y[0] - 1.0;
    const double want = log_cdf_ref(s * g.xf.row(0).dot(beta) / std::sqrt(xr.dot(sigma * xr) + 1.0));
    worst = std::max(worst, std::abs(ep_group_loglik(st) - want));
  }
  CHECK(worst < 1e-10);

  const Group one = make_group({1}, Matrix::Ones(1, 1), Matrix::Ones(1, 1));
  const Matrix id = Matrix::Identity(1, 1);
  const Vector b0 = Vector::Zero(1);
  const auto st0 = ep_group_loop(one, b0, id, ep_start_sites(one, b0, SmallVec::Zero(1)), EpOptions{});
  CHECK(ep_group_loglik(st0) == doctest::Approx(-0.693147).epsilon(1e-6));
  const Vector b1 = Vector::Ones(1);
  const auto st1 = ep_group_loop(one, b1, id, ep_start_sites(one, b1, SmallVec::Zero(1)), EpOptions{});
  CHECK(std::abs(ep_group_loglik(st1) - log_cdf_ref(1.0 / std::sqrt(2.0))) < 1e-12);
  CHECK(ep_group_loglik(st1) == doctest::Approx(-0.274108).epsilon(1e-6));
}

TEST_CASE("group loop bookkeeping and fixed point") {
  std::mt19937_64 rng(24);
  std::normal_distribution<double> nd;
  EpOptions tight;
  tight.tol = 1e-11;
  tight.max_iter = 500;
  for (int rep = 0; rep < 20; ++rep) {
    const int dr = 1 + rep % 2;
    const int df = 2;
    const int n = 3 + rep % 10;
    const Group g = random_group(rng, n, df, dr);
    Vector beta(df);
    beta << nd(rng) * 0.5, nd(rng);
    const Matrix sigma = oracle::random_spd(rng, dr, 0.3, 2.0);
    const NaturalParams prior = prior_message(sigma);
    const EPGroupState st = ep_group_loop(g, beta, prior, ep_start_sites(g, beta, SmallVec::Zero(dr)), tight);
    REQUIRE(st.converged);

    NaturalParams sum = NaturalParams::zero(dr);
    for (const auto& s : st.site_messages) sum += s;
    CHECK(std::abs(sum.eta0 - st.sum_sites.eta0) < 1e-12);
    CHECK((sum.eta1 - st.sum_sites.eta1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((sum.eta2 - st.sum_sites.eta2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((st.prior_message.eta2 - prior.eta2).cwiseAbs().maxCoeff() == 0.0);

    // Each site equals projection(cavity x likelihood) / cavity.
    const Vector lin = g.xf * beta;
    for (int j = 0; j < n; ++j) {
      NaturalParams cavity = prior + st.sum_sites - st.site_messages[j];
      cavity.eta0 = 0.0;
      const NaturalParams again = k_probit(cavity, site_context(g.y[j], lin[j], g.xr_row(j))) - cavity;
      CHECK((again.eta1 - st.site_messages[j].eta1).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((again.eta2 - st.site_messages[j].eta2).cwiseAbs().maxCoeff() < 1e-8);
    }

    // The fixed point, not the sweep path, determines the output.
    Group rev = g;
    for (int j = 0; j < n; ++j) {
      rev.y[j] = g.y[n - 1 - j];
      rev.xf.row(j) = g.xf.row(n - 1 - j);
      rev.xr.row(j) = g.xr.row(n - 1 - j);
    }
    const EPGroupState st_rev = ep_group_loop(rev, beta, prior, ep_start_sites(rev, beta, SmallVec::Zero(dr)), tight);
    CHECK(std::abs(ep_group_loglik(st_rev) - ep_group_loglik(st)) < 1e-8);

    EpOptions literal = tight;
    literal.mode = SweepMode::Literal;
    const EPGroupState st_lit = ep_group_loop(g, beta, prior, ep_start_sites(g, beta, SmallVec::Zero(dr)), literal);
    CHECK(st_lit.converged);
    CHECK(std::abs(ep_group_loglik(st_lit) - ep_group_loglik(st)) < 1e-8);
  }
}

TEST_CASE("best prediction maps natural to moment parameters") {
  EPGroupState st;
  st.prior_message = NaturalParams::zero(1);
  st.sum_sites = NaturalParams::zero(1);
  const double mu = 0.7;
  const double var = 2.5;
  st.prior_message.eta1[0] = mu / var;
  st.prior_message.eta2[0] = -1.0 / (2.0 * var);
  BestPrediction bp = ep_best_predict(st);
  CHECK(bp.mean[0] == doctest::Approx(mu).epsilon(1e-14));
  CHECK(bp.cov(0, 0) == doctest::Approx(var).epsilon(1e-14));
  st.prior_message.eta1[0] = 0.0;
  CHECK(ep_best_predict(st).mean[0] == 0.0);

  Matrix s(2, 2);
  s << 0.53, -0.36, -0.36, 0.92;
  Vector m(2);
  m << 0.1, -0.4;
  st.prior_message = from_moments(m, s);
  st.sum_sites = NaturalParams::zero(2);
  bp = ep_best_predict(st);
  CHECK((Vector(bp.mean) - m).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((Matrix(bp.cov) - s).cwiseAbs().maxCoeff() < 1e-14);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>

#include "doctest.h"
#include "freqdiff/schedule.hpp"

using namespace freqdiff;

namespace {
NoiseSchedule linear100() { return make_linear(1e-4, 2e-2, 100); }
NoiseSchedule cosine100() { return make_cosine(100); }
}  // namespace

TEST_CASE("linear-beta endpoints and cumulative product") {
  NoiseSchedule s = linear100();
  CHECK(s.betas.front() == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.betas.back() == doctest::Approx(2e-2).epsilon(1e-12));

  // independent oracle: recompute the product in the test
  double prod = 1.0;
  for (int i = 0; i < 100; ++i) {
    double beta = 1e-4 + (2e-2 - 1e-4) * i / 99.0;
    prod *= 1.0 - beta;
    CHECK(s.alpha_bar[i] == doctest::Approx(prod).epsilon(1e-14));
  }
  // frozen anchors guard against accidental schedule edits
  CHECK(s.alpha_bar[99] == doctest::Approx(0.3635632480554922).epsilon(1e-13));
  CHECK(s.alpha_bar[49] == doctest::Approx(0.7771800826611797).epsilon(1e-13));
}

TEST_CASE("single-step linear schedule degenerates to one beta") {
  NoiseSchedule s = make_linear(1e-4, 2e-2, 1);
  REQUIRE(s.num_train_steps == 1);
  CHECK(s.alpha_bar[0] == doctest::Approx(1.0 - 1e-4).epsilon(1e-15));
}

TEST_CASE("levels decrease strictly and alpha^2 + sigma^2 = 1") {
  for (auto mk : {std::function<NoiseSchedule()>(linear100),
                  std::function<NoiseSchedule()>(cosine100)}) {
    NoiseSchedule s = mk();
    for (int i = 0; i < 100; ++i) {
      CHECK(s.alpha_bar[i] > 0.0);
      CHECK(s.alpha_bar[i] < 1.0);
      if (i > 0) CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);
      double a = s.alpha(i), g = s.sigma(i);
      CHECK(std::abs(a * a + g * g - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("cosine schedule matches its closed form") {
  NoiseSchedule s = cosine100();
  for (int i = 0; i < 100; ++i) {
    double t = (i + 1) / 100.0;
    double c = std::cos(M_PI * t / 2.0);
    CHECK(s.alpha_bar[i] == c * c);  // levels are literal samples
  }
  // final level stays strictly positive (cos(pi/2) in doubles is ~6e-17)
  CHECK(s.alpha_bar[99] > 0.0);
  CHECK(s.alpha_bar[99] < 1e-30);
}

TEST_CASE("inverse snr examples") {
  NoiseSchedule s = cosine100();
  // at t = 1/2 the cosine schedule has sigma^2/alpha^2 = tan^2(pi/4) = 1
  CHECK(snr_ratio(s, 49) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(snr_ratio_continuous(s, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  // alpha_bar = 0.8 -> sigma^2/alpha^2 = 0.25
  NoiseSchedule tiny;
  tiny.num_train_steps = 1;
  tiny.betas = {0.2};
  tiny.alpha_bar = {0.8};
  CHECK(snr_ratio(tiny, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK_THROWS_AS(snr_ratio(s, 100), invalid_input);
  CHECK_THROWS_AS(snr_ratio(s, -1), invalid_input);
}

TEST_CASE("continuous form interpolates exactly through the grid") {
  NoiseSchedule lin = linear100();
  NoiseSchedule cos_s = cosine100();
  for (int i = 0; i < 100; ++i) {
    double t = (i + 1) / 100.0;
    CHECK(lin.alpha_bar_continuous(t) ==
          doctest::Approx(lin.alpha_bar[i]).epsilon(1e-12));
    // cosine anchors agree bitwise: both sides are the same expression
    CHECK(cos_s.alpha_bar_continuous(t) == cos_s.alpha_bar[i]);
  }
  for (const NoiseSchedule& s : {lin, cos_s}) {
    CHECK(s.alpha_bar_continuous(0.0) == doctest::Approx(1.0).epsilon(1e-12));
    // strictly decreasing across and between anchors
    double prev = s.alpha_bar_continuous(0.001);
    for (int j = 2; j <= 1000; ++j) {
      double cur = s.alpha_bar_continuous(j / 1000.0);
      CHECK(cur < prev);
      prev = cur;
    }
    CHECK_THROWS_AS(s.alpha_bar_continuous(-0.1), invalid_input);
    CHECK_THROWS_AS(s.alpha_bar_continuous(1.1), invalid_input);
  }
}

TEST_CASE("step grids subsample the schedule deterministically") {
  NoiseSchedule s = linear100();
  StepGrid full = make_grid(s, 100);
  REQUIRE(full.timesteps.size() == 100);
  CHECK(full.timesteps.front() == 99);
  CHECK(full.timesteps.back() == 0);

  StepGrid one = make_grid(s, 1);
  REQUIRE(one.timesteps.size() == 1);
  CHECK(one.timesteps[0] == 99);

  StepGrid two = make_grid(s, 2);
  REQUIRE(two.timesteps.size() == 2);
  CHECK(two.timesteps[0] == 99);
  CHECK(two.timesteps[1] == 49);

  for (int k : {1, 2, 5, 10, 50, 100}) {
    StepGrid g = make_grid(s, k);
    CHECK(g.steps() == k);
    CHECK(g.timesteps.front() == 99);
    for (size_t j = 0; j < g.timesteps.size(); ++j) {
      CHECK(g.timesteps[j] >= 0);
      CHECK(g.timesteps[j] <= 99);
      if (j > 0) CHECK(g.timesteps[j] < g.timesteps[j - 1]);
    }
    // the final grid entry sits at continuous time 1/K, which the
    // closed-form step-count bound evaluation relies on
    CHECK((g.timesteps.back() + 1) * k == 100);
  }

  CHECK_THROWS_AS(make_grid(s, 0), invalid_input);
  CHECK_THROWS_AS(make_grid(s, 101), invalid_input);
  CHECK_THROWS_AS(make_linear(1e-4, 2e-2, 0), invalid_input);
  CHECK_THROWS_AS(make_linear(0.0, 2e-2, 10), invalid_input);
  CHECK_THROWS_AS(make_linear(0.5, 0.2, 10), invalid_input);
  CHECK_THROWS_AS(make_cosine(0), invalid_input);
}

// Smooth a noisy SVI slice and print the selected order/bandwidth per strike.

#include <cstdio>

#include "lvsmooth/local_smoother.hpp"
#include "lvsmooth/synthetic_markets.hpp"

int main() {
    using namespace lvsmooth;
    SviParams svi{0.030358, 0.0503815, -0.1, 0.3, 0.048922};
    std::vector<double> strikes;
    for (int i = 0; i < 101; ++i) strikes.push_back(0.5 + i * 0.01);
    const QuoteSlice noisy = make_svi_slice(svi, strikes, 1.0, 1.0, NoiseSpec{0.0, 0.001, 11});
    const SmoothedSlice sm = smooth_slice(noisy, SmootherConfig{});

    std::printf("pilot bandwidth: %.6f\n", sm.pilot_bandwidth);
    std::printf("%10s %12s %12s %4s %10s %5s\n", "strike", "iv_raw", "iv_smooth", "p*", "h*", "iter");
    for (std::size_t i = 0; i < sm.points.size(); i += 10) {
        const auto& p = sm.points[i];
        std::printf("%10.4f %12.8f %12.8f %4d %10.6f %5d\n", p.strike, noisy.quotes[i].iv_mid,
                    p.iv_smoothed, p.p_star, p.h_star, p.iterations);
    }
    return 0;
}

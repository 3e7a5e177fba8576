#pragma once

#include <array>
#include <string_view>

namespace phynfp::testing {

/// Tabulated river-network rows: forward MSE, reverse MSE, printed DS and printed RDS (percent).
struct TabulatedRow {
  std::string_view model;
  double forward;
  double reverse;
  double ds;
  double rds_percent;  // unused on the reference row
  bool reference;
};

inline constexpr std::array<TabulatedRow, 9> kRiverRows{{
    {"PhyNFP", 0.0801, 0.0906, 0.0105, 0.0, true},
    {"PhyNFP_DM", 0.0898, 0.0961, 0.0063, -40.0, false},
    {"GWN", 0.1101, 0.1132, 0.0031, -70.5, false},
    {"MP PDE Solver", 0.1126, 0.1082, -0.0044, -141.9, false},
    {"MPNN", 0.1170, 0.1182, 0.0012, -88.6, false},
    {"GraphSAGE", 0.1224, 0.1149, -0.0075, -171.4, false},
    {"GAT", 0.1233, 0.1265, 0.0032, -69.5, false},
    {"GNO", 0.1247, 0.1265, 0.0018, -82.9, false},
    {"GCN", 0.1365, 0.1357, -0.0008, -107.6, false},
}};

}  // namespace phynfp::testing

#pragma once

#include <vector>

#include "lcfm/tensor.hpp"

namespace lcfm {

// Exact linear assignment on a square cost matrix (Jonker–Volgenant shortest
// augmenting paths, O(n^3)). Returns perm with row i matched to column
// perm[i], minimizing the total cost. Capped at 512 rows.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

double assignment_cost(const Matrix& cost, const std::vector<std::size_t>& perm);

}  // namespace lcfm

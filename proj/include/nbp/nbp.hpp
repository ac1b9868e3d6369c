#ifndef NBP_NBP_HPP
#define NBP_NBP_HPP

#include "nbp/analysis.hpp"
#include "nbp/bp.hpp"
#include "nbp/error.hpp"
#include "nbp/factor_graph.hpp"
#include "nbp/free_energy.hpp"
#include "nbp/graph_fields.hpp"
#include "nbp/linalg.hpp"
#include "nbp/model.hpp"

#endif  // NBP_NBP_HPP

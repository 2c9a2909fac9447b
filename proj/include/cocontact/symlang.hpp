#pragma once

// Minimal symbolic scalar algebra: construction, parsing, differentiation,
// substitution, numeric evaluation and a randomized zero oracle.

#include "cocontact/symlang/eval.hpp"
#include "cocontact/symlang/expr.hpp"
#include "cocontact/symlang/ops.hpp"
#include "cocontact/symlang/parse.hpp"
#include "cocontact/symlang/zero.hpp"

#pragma once

#include "doctest.h"
#include "hyperagg/error.hpp"

// Runs fn and returns the code of the hyperagg::Error it throws.
template <typename Fn>
hyperagg::ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const hyperagg::Error& e) {
    return e.code();
  }
  FAIL("expected a hyperagg::Error");
  return hyperagg::ErrorCode::InvalidArgument;
}

#include <catch2/catch_amalgamated.hpp>
#include "binarykin/linop.hpp"

# Makes the test directory a package so suites run as modules

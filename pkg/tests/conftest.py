# keeps the tests directory importable so suites can share oracle helpers

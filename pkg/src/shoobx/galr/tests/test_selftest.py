###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Self-Test Tests
"""
import unittest

from shoobx.galr import selftest
from shoobx.galr.errors import NonFiniteError


class SelftestTests(unittest.TestCase):
    def test_all_checks_pass(self):
        results = selftest.run_selftest()
        names = [name for name, _ in selftest.CHECKS]
        self.assertEqual([r.check for r in results], names)
        for result in results:
            self.assertTrue(result.passed, f"{result.check}: {result.detail}")

    def test_error_is_failure(self):
        def broken():
            raise NonFiniteError("non-finite output from tanh")

        checks = (("broken", broken), ("ok", lambda: (True, "fine")))
        results = selftest.run_selftest(checks)
        self.assertFalse(results[0].passed)
        self.assertTrue(results[0].detail.startswith("non-finite output from tanh ("))
        self.assertTrue(results[1].passed)

    def test_format_table(self):
        table = selftest.format_table(
            [
                selftest.CheckResult("correlation", True, "ok"),
                selftest.CheckResult("fd", False, "error 0.5"),
            ]
        )
        self.assertEqual(
            table.splitlines(),
            [
                "check       | status | detail",
                "------------+--------+-------",
                "correlation | pass   | ok",
                "fd          | FAIL   | error 0.5",
            ],
        )

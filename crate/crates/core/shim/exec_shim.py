"""Execution shim for the exforge sandbox.

Usage: shim <run|test|coverage> <solution> [tests] [stdin_script]

Runs the solution (and tests) inside this interpreter, captures their output,
and prints exactly one fenced JSON result document as the last thing on the
real stdout. Exit status mirrors the solution in run mode and is 0 in the
test modes. Status 70 without a document means the shim itself failed.
"""

import ast
import base64
import builtins
import io
import json
import os
import sys
import traceback
import types
import unittest

SCHEMA_VERSION = 1
STARTED = "===EXFORGE-SHIM-STARTED==="
FENCE_BEGIN = "===EXFORGE-SHIM-RESULT-BEGIN==="
FENCE_END = "===EXFORGE-SHIM-RESULT-END==="
INTERNAL_FAULT = 70


class CappedBuffer(io.TextIOBase):
    def __init__(self, limit):
        self.limit = limit
        self.parts = []
        self.size = 0
        self.truncated = False

    def writable(self):
        return True

    def write(self, s):
        if not isinstance(s, str):
            s = str(s)
        room = self.limit - self.size
        if room <= 0:
            self.truncated = self.truncated or bool(s)
            return len(s)
        chunk = s[:room]
        if len(chunk) < len(s):
            self.truncated = True
        self.parts.append(chunk)
        self.size += len(chunk)
        return len(s)

    def getvalue(self):
        return "".join(self.parts)


def deny_sockets():
    import socket
    import _socket

    def denied(*_args, **_kwargs):
        raise PermissionError("network access is disabled in the sandbox")

    class DeniedSocket(socket.socket):
        def __init__(self, *args, **kwargs):
            denied()

    socket.socket = DeniedSocket
    socket.SocketType = DeniedSocket
    socket.create_connection = denied
    socket.create_server = denied
    socket.socketpair = denied
    socket.fromfd = denied
    socket.getaddrinfo = denied
    _socket.socket = DeniedSocket


def executable_spans(source):
    """Maps each statement's reported line to the lines that count as executing it."""
    tree = ast.parse(source)
    docstrings = set()
    for node in ast.walk(tree):
        body = getattr(node, "body", None)
        if isinstance(node, (ast.Module, ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)) and body:
            first = body[0]
            if isinstance(first, ast.Expr) and isinstance(getattr(first, "value", None), ast.Constant) \
                    and isinstance(first.value.value, str):
                docstrings.add(id(first))
    spans = {}
    for node in ast.walk(tree):
        if not isinstance(node, ast.stmt) or id(node) in docstrings:
            continue
        if isinstance(node, (ast.Global, ast.Nonlocal)):
            continue
        start = node.lineno
        decorators = getattr(node, "decorator_list", None) or []
        if decorators:
            start = min([start] + [d.lineno for d in decorators])
        body = getattr(node, "body", None)
        if isinstance(body, list) and body:
            end = max(node.lineno, body[0].lineno - 1)
            if decorators:
                end = max(end, node.lineno)
        else:
            end = getattr(node, "end_lineno", None) or node.lineno
        spans[start] = (start, end)
    return spans


class Tracer:
    def __init__(self, filename):
        self.filename = filename
        self.lines = set()

    def global_trace(self, frame, event, arg):
        if frame.f_code.co_filename == self.filename:
            return self.local_trace
        return None

    def local_trace(self, frame, event, arg):
        if event == "line":
            self.lines.add(frame.f_lineno)
        return self.local_trace


class RecordingResult(unittest.TestResult):
    def __init__(self):
        super().__init__()
        self.records = []

    def _name(self, test):
        method = getattr(test, "_testMethodName", None)
        if method is None:
            return str(test)
        return "%s.%s" % (type(test).__name__, method)

    def addSuccess(self, test):
        super().addSuccess(test)
        self.records.append({"name": self._name(test), "verdict": "pass", "message": ""})

    def addFailure(self, test, err):
        super().addFailure(test, err)
        self.records.append({"name": self._name(test), "verdict": "fail", "message": self._msg(err)})

    def addError(self, test, err):
        super().addError(test, err)
        self.records.append({"name": self._name(test), "verdict": "error", "message": self._msg(err)})

    def addSkip(self, test, reason):
        super().addSkip(test, reason)
        self.records.append({"name": self._name(test), "verdict": "skip", "message": str(reason)})

    def addExpectedFailure(self, test, err):
        super().addExpectedFailure(test, err)
        self.records.append({"name": self._name(test), "verdict": "pass", "message": "expected failure"})

    def addUnexpectedSuccess(self, test):
        super().addUnexpectedSuccess(test)
        self.records.append({"name": self._name(test), "verdict": "fail", "message": "unexpected success"})

    @staticmethod
    def _msg(err):
        etype, value, _tb = err
        text = "%s: %s" % (etype.__name__, value)
        return text[:2000]


def discover(namespace, inherited):
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for name, obj in list(namespace.items()):
        if not isinstance(obj, type) or not issubclass(obj, unittest.TestCase):
            continue
        if obj.__module__.startswith("unittest"):
            continue
        if inherited.get(name) is obj:
            continue
        suite.addTests(loader.loadTestsFromTestCase(obj))
    return suite


def load_module(name, path, source, tracer):
    module = types.ModuleType(name)
    module.__file__ = path
    module.__builtins__ = builtins
    sys.modules[name] = module
    code = compile(source, path, "exec")
    if tracer is not None:
        sys.settrace(tracer.global_trace)
    exec(code, module.__dict__)
    return module


def main(argv):
    real_out = os.fdopen(os.dup(1), "w", encoding="utf-8")
    real_out.write(STARTED + "\n")
    real_out.flush()

    if len(argv) < 3 or argv[1] not in ("run", "test", "coverage"):
        sys.stderr.write("usage: shim <run|test|coverage> <solution> [tests] [stdin_script]\n")
        os._exit(INTERNAL_FAULT)
    mode = argv[1]
    # Work next to the solution and compile under bare file names so that
    # messages do not depend on the temp directory.
    os.chdir(os.path.dirname(os.path.abspath(argv[2])))
    solution_path = os.path.basename(argv[2])
    tests_path = os.path.basename(argv[3]) if len(argv) > 3 and argv[3] else None
    stdin_path = os.path.abspath(argv[4]) if len(argv) > 4 and argv[4] else None

    with open(solution_path, encoding="utf-8") as f:
        solution_src = f.read()
    tests_src = ""
    if tests_path is not None:
        with open(tests_path, encoding="utf-8") as f:
            tests_src = f.read()
    stdin_text = ""
    if stdin_path is not None:
        with open(stdin_path, encoding="utf-8") as f:
            stdin_text = f.read()

    limit = int(os.environ.get("EXFORGE_MAX_OUTPUT", str(1 << 20)))
    out_buf, err_buf = CappedBuffer(limit), CappedBuffer(limit)
    deny_sockets()
    if not hasattr(unittest.TestCase, "assertEquals"):
        unittest.TestCase.assertEquals = unittest.TestCase.assertEqual

    result = {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "status": "",
        "tests": [],
        "covered_lines": [],
        "executable_lines": [],
        "message": "",
    }
    exit_code = 0
    tracer = None
    spans = {}
    if mode == "coverage":
        tracer = Tracer(solution_path)
        try:
            spans = executable_spans(solution_src)
        except SyntaxError:
            spans = {}

    sys.stdin = io.StringIO(stdin_text)
    sys.stdout, sys.stderr = out_buf, err_buf
    try:
        if mode == "run":
            try:
                load_module("__main__", solution_path, solution_src, None)
                result["status"] = "Ok"
            except SystemExit as e:
                code = e.code
                if code is None:
                    exit_code = 0
                elif isinstance(code, int):
                    exit_code = code
                else:
                    err_buf.write(str(code) + "\n")
                    exit_code = 1
                result["status"] = "Ok" if exit_code == 0 else "RuntimeError"
            except BaseException:
                traceback.print_exc(file=err_buf)
                result["status"] = "RuntimeError"
                result["message"] = traceback.format_exc(limit=0).strip()[:2000]
                exit_code = 1
        elif not tests_src.strip():
            result["status"] = "NoTests"
        else:
            try:
                module = load_module("solution", solution_path, solution_src, tracer)
            except BaseException:
                traceback.print_exc(file=err_buf)
                result["status"] = "Errored"
                result["message"] = "solution failed to import: " + traceback.format_exc(limit=0).strip()[:2000]
                module = None
            if module is not None:
                inherited = dict(module.__dict__)
                namespace = dict(inherited)
                namespace["unittest"] = unittest
                namespace["__name__"] = "tests"
                namespace["__file__"] = tests_path
                try:
                    exec(compile(tests_src, tests_path, "exec"), namespace)
                    suite = discover(namespace, inherited)
                except BaseException:
                    traceback.print_exc(file=err_buf)
                    result["status"] = "Errored"
                    result["message"] = "tests failed to load: " + traceback.format_exc(limit=0).strip()[:2000]
                    suite = None
                if suite is not None:
                    recorder = RecordingResult()
                    suite.run(recorder)
                    result["tests"] = recorder.records
                    if not recorder.records:
                        result["status"] = "NoTests"
                    elif all(r["verdict"] == "pass" for r in recorder.records):
                        result["status"] = "AllPassed"
                    else:
                        result["status"] = "SomeFailed"
    finally:
        sys.settrace(None)
        sys.stdout, sys.stderr = sys.__stdout__, sys.__stderr__

    if tracer is not None:
        result["executable_lines"] = sorted(spans)
        covered = []
        for start, (lo, hi) in sorted(spans.items()):
            if any(lo <= line <= hi for line in tracer.lines):
                covered.append(start)
        result["covered_lines"] = covered
    result["stdout_b64"] = base64.b64encode(out_buf.getvalue().encode("utf-8", "replace")).decode("ascii")
    result["stderr_b64"] = base64.b64encode(err_buf.getvalue().encode("utf-8", "replace")).decode("ascii")
    result["output_truncated"] = out_buf.truncated or err_buf.truncated

    real_out.write("\n" + FENCE_BEGIN + "\n" + json.dumps(result) + "\n" + FENCE_END + "\n")
    real_out.flush()
    os._exit(exit_code if 0 <= exit_code < 256 else 1)


if __name__ == "__main__":
    try:
        main(sys.argv)
    except BaseException:
        try:
            sys.__stderr__.write("exforge shim internal fault:\n" + traceback.format_exc())
            sys.__stderr__.flush()
        finally:
            os._exit(INTERNAL_FAULT)

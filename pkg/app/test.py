#!/usr/bin/env python3
"""
asmk-how 测试运行器
发现并运行 app/tests 下的测试用例，可按模块或文件名模式筛选
"""

import argparse
import logging
import os
import sys
import time
import unittest
from collections import Counter
from typing import Iterator, List

APP_DIR = os.path.dirname(os.path.abspath(__file__))
TESTS_DIR = os.path.join(APP_DIR, "tests")
PROJECT_ROOT = os.path.dirname(APP_DIR)

# 添加项目根目录到 Python 路径
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

# 耗时较长的统计测试（合成数据检索）可通过环境变量跳过
SKIP_SLOW_ENV = "MK_SKIP_SLOW"


def iter_cases(suite: unittest.TestSuite) -> Iterator[unittest.TestCase]:
    for item in suite:
        if isinstance(item, unittest.TestSuite):
            yield from iter_cases(item)
        else:
            yield item


def load_suite(pattern: str, modules: List[str]) -> unittest.TestSuite:
    """按模块名加载，未指定模块时按文件名模式发现"""
    loader = unittest.TestLoader()
    if not modules:
        return loader.discover(start_dir=TESTS_DIR, pattern=pattern, top_level_dir=PROJECT_ROOT)
    suite = unittest.TestSuite()
    for name in modules:
        if "." not in name:
            name = f"app.tests.{name}"
        suite.addTest(loader.loadTestsFromName(name))
    return suite


def print_summary(suite: unittest.TestSuite) -> None:
    per_module = Counter(type(case).__module__.rsplit(".", 1)[-1] for case in iter_cases(suite))
    print("=" * 60)
    print("  asmk-how - 测试运行器")
    print("=" * 60)
    for module, count in sorted(per_module.items()):
        print(f"   {module:<28} {count:4d} 个用例")
    print("-" * 60)


def run(suite: unittest.TestSuite, verbosity: int, failfast: bool) -> bool:
    start = time.time()
    result = unittest.TextTestRunner(verbosity=verbosity, stream=sys.stdout, failfast=failfast).run(suite)
    duration = time.time() - start

    print("=" * 60)
    print(f"运行时间: {duration:.2f} 秒")
    print(f"总测试数: {result.testsRun}  失败: {len(result.failures)}  "
          f"错误: {len(result.errors)}  跳过: {len(result.skipped)}")
    for label, items in (("失败", result.failures), ("错误", result.errors)):
        for test, _ in items:
            print(f"   {label}: {test.id()}")
    return result.wasSuccessful()


def main() -> int:
    parser = argparse.ArgumentParser(
        description="asmk-how 测试运行器",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用示例:
  python app/test.py                          # 运行所有测试
  python app/test.py test_kernel test_index   # 运行指定模块
  python app/test.py --pattern "test_s*.py"   # 按文件名模式筛选
  python app/test.py --skip-slow --failfast   # 跳过统计测试，首个失败即停止
        """,
    )
    parser.add_argument("modules", nargs="*", help="测试模块名 (例如: test_kernel)")
    parser.add_argument("--pattern", "-p", default="test_*.py", help="测试文件名模式")
    parser.add_argument("--list", "-l", action="store_true", help="只列出测试用例数量")
    parser.add_argument("--failfast", "-f", action="store_true", help="首个失败即停止")
    parser.add_argument("--skip-slow", action="store_true", help=f"跳过耗时测试 (设置 {SKIP_SLOW_ENV}=1)")
    parser.add_argument("--verbose", "-v", type=int, choices=[0, 1, 2], default=2, help="详细程度")
    args = parser.parse_args()

    if args.skip_slow:
        os.environ[SKIP_SLOW_ENV] = "1"
    # 被测代码的日志只保留警告以上
    logging.basicConfig(level=logging.WARNING)

    suite = load_suite(args.pattern, args.modules)
    print_summary(suite)
    if args.list:
        return 0
    return 0 if run(suite, args.verbose, args.failfast) else 1


if __name__ == "__main__":
    sys.exit(main())

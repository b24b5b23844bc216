import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from dslab._alloc import tune_allocator

tune_allocator()

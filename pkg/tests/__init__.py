import os
import sys

# make `cascadesr` importable without installing the package
sys.path.append(os.path.dirname(os.path.dirname(os.path.realpath(__file__))))

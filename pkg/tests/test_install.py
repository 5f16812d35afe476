# tests/test_install.py
import json5
import matplotlib
import networkx as nx
import numpy as np
import scipy.sparse as sp

import gridsync


def test_import_and_core_types():
    assert gridsync.__version__
    assert np.zeros(2).shape == (2,)
    assert sp.csr_matrix(np.eye(2)).nnz == 2
    assert nx.is_connected(nx.path_graph(3))
    assert json5.loads("{a: 1, // note\n}") == {"a": 1}
    assert matplotlib.get_backend()

import networkx as nx


def build_graph(net):
    """
    Builds the undirected topology graph of a network.

    Nodes are bus ids carrying the bus `kind`; edges are keyed by branch id
    so parallel branches stay distinct. Branches that reference an unknown
    bus are skipped (validation reports them separately).
    """
    G = nx.MultiGraph()

    for bus in net.buses:
        G.add_node(bus.id, kind=bus.kind)

    for branch in net.branches:
        if branch.from_bus not in G or branch.to_bus not in G:
            continue
        G.add_edge(
            branch.from_bus,
            branch.to_bus,
            key=branch.id,
            susceptance=branch.susceptance,
            resistance=branch.resistance,
        )

    return G


def feeder_components(G):
    """
    Returns the connected groups of distribution buses, each as a sorted list.
    """
    distribution = [n for n, kind in G.nodes(data="kind") if kind == "distribution"]
    sub = G.subgraph(distribution)
    return [sorted(c, key=str) for c in nx.connected_components(sub)]


def downstream_buses(G, root, parent):
    """
    Buses reachable from `root` without crossing back through `parent`,
    i.e. the subtree a radial feeder bus supplies.
    """
    view = nx.subgraph_view(G, filter_node=lambda n: n != parent)
    return set(nx.dfs_preorder_nodes(view, root))
